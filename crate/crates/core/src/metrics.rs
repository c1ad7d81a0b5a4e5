//! Evaluation metrics: overlap, boundary distance, test-retest agreement and
//! AHA-16 segmental statistics, plus the metrics CSV format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Grid2D, Mask, Raster};

pub const SEGMENTS: usize = 16;

fn check_shape(a: &Mask, b: &Mask) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::GridMismatch("masks differ in size".into()))
    }
}

/// Dice overlap `2|a ∩ b| / (|a| + |b|)`.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    check_shape(a, b)?;
    let (na, nb) = (a.count(), b.count());
    if na + nb == 0 {
        return Err(Error::Undefined("Dice of two empty masks".into()));
    }
    let both = a.intersection(b).count();
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Mask pixels with at least one 4-neighbour outside the mask; pixels on the
/// image edge count as boundary.
pub fn boundary(mask: &Mask) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height(), mask.width());
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1);
            if edge {
                out.push((x, y));
            }
        }
    }
    out
}

/// Symmetric Hausdorff distance between mask boundaries, in mm.
pub fn hausdorff(a: &Mask, b: &Mask, grid: &Grid2D) -> Result<f64> {
    check_shape(a, b)?;
    if a.count() == 0 || b.count() == 0 {
        return Err(Error::Undefined("Hausdorff distance of an empty mask".into()));
    }
    let (ba, bb) = (boundary(a), boundary(b));
    let dist = |p: (usize, usize), q: (usize, usize)| {
        let dx = (p.0 as f64 - q.0 as f64) * grid.spacing_x;
        let dy = (p.1 as f64 - q.1 as f64) * grid.spacing_y;
        dx.hypot(dy)
    };
    let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| {
        from.iter()
            .map(|&p| to.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    Ok(directed(&ba, &bb).max(directed(&bb, &ba)))
}

/// ICC(3,1): two-way mixed effects, single measurement, consistency, with the
/// two columns `test` and `retest` as raters.
pub fn icc3(test: &[f64], retest: &[f64]) -> Result<f64> {
    let n = test.len();
    if retest.len() != n {
        return Err(Error::InvalidInput(format!(
            "{n} test values but {} retest values",
            retest.len()
        )));
    }
    if n < 3 {
        return Err(Error::InvalidInput(format!("ICC needs at least 3 targets, got {n}")));
    }
    if test.iter().chain(retest).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("ICC inputs must be finite".into()));
    }
    let k = 2.0;
    let nf = n as f64;
    let grand = (test.iter().sum::<f64>() + retest.iter().sum::<f64>()) / (k * nf);
    let col_means = [
        test.iter().sum::<f64>() / nf,
        retest.iter().sum::<f64>() / nf,
    ];
    let mut ss_rows = 0.0;
    let mut ss_err = 0.0;
    for i in 0..n {
        let row_mean = 0.5 * (test[i] + retest[i]);
        ss_rows += k * (row_mean - grand).powi(2);
        for (j, v) in [test[i], retest[i]].into_iter().enumerate() {
            ss_err += (v - row_mean - col_means[j] + grand).powi(2);
        }
    }
    let ms_rows = ss_rows / (nf - 1.0);
    let ms_err = ss_err / ((nf - 1.0) * (k - 1.0));
    if ms_rows == 0.0 {
        return Err(Error::Undefined("ICC with zero between-target variance".into()));
    }
    Ok((ms_rows - ms_err) / (ms_rows + (k - 1.0) * ms_err))
}

/// Ring of the AHA-16 model a slice belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ring {
    Basal,
    Mid,
    Apical,
}

impl Ring {
    pub fn sectors(self) -> usize {
        match self {
            Ring::Basal | Ring::Mid => 6,
            Ring::Apical => 4,
        }
    }

    /// Label of the ring's first segment (1-based, as in the bullseye).
    pub fn first_label(self) -> usize {
        match self {
            Ring::Basal => 1,
            Ring::Mid => 7,
            Ring::Apical => 13,
        }
    }

    /// Ring of slice `index` in a five-slice base-to-apex stack:
    /// basal, basal, mid, mid, apical.
    pub fn for_slice(index: usize) -> Result<Ring> {
        match index {
            0 | 1 => Ok(Ring::Basal),
            2 | 3 => Ok(Ring::Mid),
            4 => Ok(Ring::Apical),
            _ => Err(Error::InvalidInput(format!(
                "slice {index} is outside a five-slice stack"
            ))),
        }
    }
}

/// Per-pixel AHA segment labels (1..=16, 0 outside the myocardium).
///
/// Sectors are measured counterclockwise as displayed (y points down) from
/// `ref_angle_deg` around `center = (x, y)`.
pub fn aha16_labels(myo: &Mask, center: (f64, f64), ref_angle_deg: f64, ring: Ring) -> Raster {
    let width = 360.0 / ring.sectors() as f64;
    Raster::from_fn(myo.height(), myo.width(), |x, y| {
        if !myo.get(x, y) {
            return 0.0;
        }
        let theta = (-(y as f64 - center.1)).atan2(x as f64 - center.0).to_degrees();
        let rel = (theta - ref_angle_deg).rem_euclid(360.0);
        let sector = ((rel / width).floor() as usize).min(ring.sectors() - 1);
        (ring.first_label() + sector) as f64
    })
}

/// Mean T1 per AHA segment over valid pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentalReport {
    /// `None` for segments without valid pixels.
    pub segment_means: Vec<Option<f64>>,
    pub segment_counts: Vec<usize>,
    pub icc: Option<f64>,
}

impl SegmentalReport {
    pub fn empty() -> Self {
        Self {
            segment_means: vec![None; SEGMENTS],
            segment_counts: vec![0; SEGMENTS],
            icc: None,
        }
    }

    /// Pools two reports (e.g. two basal slices) by pixel-weighted means.
    pub fn merge(&self, other: &SegmentalReport) -> SegmentalReport {
        let mut out = SegmentalReport::empty();
        for s in 0..SEGMENTS {
            let (na, nb) = (self.segment_counts[s], other.segment_counts[s]);
            let sum = self.segment_means[s].unwrap_or(0.0) * na as f64
                + other.segment_means[s].unwrap_or(0.0) * nb as f64;
            out.segment_counts[s] = na + nb;
            out.segment_means[s] = (na + nb > 0).then(|| sum / (na + nb) as f64);
        }
        out
    }
}

/// Mean of `t1` per segment label, skipping `invalid` pixels.
pub fn segmental_means(t1: &Raster, labels: &Raster, invalid: Option<&Mask>) -> Result<SegmentalReport> {
    if !t1.same_shape(labels)
        || invalid.is_some_and(|m| m.height() != t1.height() || m.width() != t1.width())
    {
        return Err(Error::GridMismatch("segmental inputs differ in size".into()));
    }
    let mut sums = [0.0; SEGMENTS];
    let mut counts = [0usize; SEGMENTS];
    for i in 0..t1.len() {
        let label = labels.data()[i];
        if label < 1.0 || invalid.is_some_and(|m| m.data()[i]) {
            continue;
        }
        let s = label as usize - 1;
        if s < SEGMENTS {
            sums[s] += t1.data()[i];
            counts[s] += 1;
        }
    }
    Ok(SegmentalReport {
        segment_means: (0..SEGMENTS)
            .map(|s| (counts[s] > 0).then(|| sums[s] / counts[s] as f64))
            .collect(),
        segment_counts: counts.to_vec(),
        icc: None,
    })
}

/// Mean of `values` over `mask`, or `None` for an empty mask.
pub fn masked_mean(values: &Raster, mask: &Mask) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (v, &m) in values.data().iter().zip(mask.data()) {
        if m {
            sum += v;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Median of `values` over `mask`, or `None` for an empty mask.
pub fn masked_median(values: &Raster, mask: &Mask) -> Option<f64> {
    let mut v: Vec<f64> = values
        .data()
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| m)
        .map(|(v, _)| *v)
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub case: String,
    pub slice: String,
    pub method: String,
    pub r2_mean: Option<f64>,
    pub dice: Option<f64>,
    pub hd_mm: Option<f64>,
    pub mean_det_j: Option<f64>,
    pub folds: Option<usize>,
    pub t1_segments: Vec<Option<f64>>,
}

fn metrics_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "case", "slice", "method", "r2_mean", "dice", "hd_mm", "mean_detJ", "folds",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((1..=SEGMENTS).map(|s| format!("t1_seg_{s:02}")));
    h
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_opt<T: std::str::FromStr>(s: &str) -> Result<Option<T>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::InvalidInput(format!("unparsable metrics field {s:?}")))
}

/// Writes rows with an empty cell for every undefined value.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(metrics_header())?;
    for r in rows {
        let mut rec = vec![
            r.case.clone(),
            r.slice.clone(),
            r.method.clone(),
            fmt_opt(r.r2_mean),
            fmt_opt(r.dice),
            fmt_opt(r.hd_mm),
            fmt_opt(r.mean_det_j),
            fmt_opt(r.folds),
        ];
        rec.extend((0..SEGMENTS).map(|s| fmt_opt(r.t1_segments.get(s).copied().flatten())));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != metrics_header() {
        return Err(Error::InvalidInput(format!(
            "{} does not have the metrics columns",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(MetricsRow {
            case: rec[0].to_string(),
            slice: rec[1].to_string(),
            method: rec[2].to_string(),
            r2_mean: parse_opt(&rec[3])?,
            dice: parse_opt(&rec[4])?,
            hd_mm: parse_opt(&rec[5])?,
            mean_det_j: parse_opt(&rec[6])?,
            folds: parse_opt(&rec[7])?,
            t1_segments: (0..SEGMENTS)
                .map(|s| parse_opt(&rec[8 + s]))
                .collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}
