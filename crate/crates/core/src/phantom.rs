//! Synthetic ground truth: an annulus-and-disc heart on a uniform background,
//! per-frame smooth random motion, Rician noise, and perfect segmentations.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::confidence::SegFrame;
use crate::error::{Error, Result};
use crate::field::{self, DisplacementField, VelocityField};
use crate::imaging::{self, Frame, Grid2D, Mask, Raster, SequenceKind, Series};
use crate::signal::{MolliParams, ParamMap, RecoveryParams, StoneParams};

/// Tissue label values stored in [`PhantomCase::labels`].
pub const LABEL_BACKGROUND: f64 = 0.0;
pub const LABEL_MYO: f64 = 1.0;
pub const LABEL_BLOOD: f64 = 2.0;
/// Outside the body: no signal, no T1.
pub const LABEL_AIR: f64 = 3.0;

pub const TRUTH_DIR: &str = "truth";
pub const TRUTH_FILE: &str = "truth.json";

/// Eleven log-spaced samples in [100, 4500] ms.
pub fn default_stone_times() -> Vec<f64> {
    let (lo, hi) = (100.0f64.ln(), 4500.0f64.ln());
    (0..11)
        .map(|i| (lo + (hi - lo) * i as f64 / 10.0).exp())
        .collect()
}

/// Eight samples of a 5(3)3-style scheme, in acquisition order: two
/// interleaved Look-Locker trains with inversion times 100 and 180 ms at an
/// 800 ms heartbeat.
pub fn default_molli_times() -> Vec<f64> {
    vec![100.0, 900.0, 1700.0, 2500.0, 3300.0, 180.0, 980.0, 1780.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub spacing_mm: [f64; 2],
    pub sequence: SequenceKind,
    /// Sampling times in ms; empty selects the sequence default.
    pub times_ms: Vec<f64>,
    /// Annulus centre `(x, y)` in pixels; `None` is the image centre.
    pub center: Option<[f64; 2]>,
    pub myo_inner_radius: f64,
    pub myo_outer_radius: f64,
    /// Radius of the blood-pool disc; at most the inner myocardial radius.
    pub lv_radius: f64,
    /// Radius of the body disc around the heart; air (zero signal) outside.
    pub body_radius: f64,
    pub t1_myo: f64,
    pub t1_blood: f64,
    pub t1_background: f64,
    /// Equilibrium magnetization (STONE) or `A` (MOLLI) per region.
    pub m0_myo: f64,
    pub m0_blood: f64,
    pub m0_background: f64,
    /// MOLLI `B / A`; must exceed 1.
    pub molli_b_ratio: f64,
    /// Peak velocity norm of each frame's motion, pixels.
    pub motion_amplitude: f64,
    /// Gaussian smoothing of the motion noise, full-resolution pixels.
    pub motion_smoothness: f64,
    /// Rician noise level in signal units.
    pub noise_sigma: f64,
    /// Frames whose segmentation confidence is lowered to `degraded_conf`.
    pub degraded_frames: Vec<usize>,
    pub degraded_conf: f64,
    pub slice_id: String,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            height: 160,
            width: 160,
            spacing_mm: [2.1, 2.1],
            sequence: SequenceKind::Stone,
            times_ms: Vec::new(),
            center: None,
            myo_inner_radius: 15.0,
            myo_outer_radius: 21.0,
            lv_radius: 15.0,
            body_radius: 70.0,
            t1_myo: 1100.0,
            t1_blood: 1700.0,
            t1_background: 300.0,
            m0_myo: 800.0,
            m0_blood: 1000.0,
            m0_background: 400.0,
            molli_b_ratio: 1.9,
            motion_amplitude: 0.0,
            motion_smoothness: 16.0,
            noise_sigma: 0.0,
            degraded_frames: Vec::new(),
            degraded_conf: 0.5,
            slice_id: "phantom".into(),
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.height, self.width, self.spacing_mm[0], self.spacing_mm[1])
    }

    pub fn times(&self) -> Vec<f64> {
        if !self.times_ms.is_empty() {
            return self.times_ms.clone();
        }
        match self.sequence {
            SequenceKind::Stone => default_stone_times(),
            SequenceKind::Molli => default_molli_times(),
        }
    }

    pub fn center(&self) -> [f64; 2] {
        self.center.unwrap_or([
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        ])
    }

    /// Truth T1 of a tissue label; air has none and reports 0.
    pub fn t1_of_label(&self, label: f64) -> f64 {
        if label == LABEL_MYO {
            self.t1_myo
        } else if label == LABEL_BLOOD {
            self.t1_blood
        } else if label == LABEL_AIR {
            0.0
        } else {
            self.t1_background
        }
    }

    fn params_of_label(&self, label: f64) -> RecoveryParams {
        if label == LABEL_MYO {
            self.region_params(self.t1_myo, self.m0_myo)
        } else if label == LABEL_BLOOD {
            self.region_params(self.t1_blood, self.m0_blood)
        } else if label == LABEL_AIR {
            self.region_params(self.t1_background, 0.0)
        } else {
            self.region_params(self.t1_background, self.m0_background)
        }
    }

    fn region_params(&self, t1: f64, m0: f64) -> RecoveryParams {
        match self.sequence {
            SequenceKind::Stone => RecoveryParams::Stone(StoneParams { m0, t1 }),
            SequenceKind::Molli => RecoveryParams::Molli(MolliParams {
                a: m0,
                b: self.molli_b_ratio * m0,
                t1_star: t1 / (self.molli_b_ratio - 1.0),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        let [cx, cy] = self.center();
        let room = cx
            .min(cy)
            .min(grid.width as f64 - 1.0 - cx)
            .min(grid.height as f64 - 1.0 - cy)
            .min(grid.height.min(grid.width) as f64 / 2.0);
        if !(self.myo_inner_radius > 0.0
            && self.myo_inner_radius < self.myo_outer_radius
            && self.myo_outer_radius < room)
        {
            return bad(format!(
                "annulus radii {} < {} must fit inside {room:.1} px",
                self.myo_inner_radius, self.myo_outer_radius
            ));
        }
        if !(self.lv_radius > 0.0 && self.lv_radius <= self.myo_inner_radius) {
            return bad(format!(
                "blood pool radius {} must lie in (0, {}]",
                self.lv_radius, self.myo_inner_radius
            ));
        }
        if !(self.body_radius > self.myo_outer_radius) {
            return bad(format!(
                "body radius {} must exceed the outer myocardial radius",
                self.body_radius
            ));
        }
        let times = self.times();
        if times.len() < Series::MIN_FRAMES {
            return Err(Error::TooFewFrames(times.len()));
        }
        if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return bad("sampling times must be finite and non-negative".into());
        }
        for (name, v) in [
            ("t1_myo", self.t1_myo),
            ("t1_blood", self.t1_blood),
            ("t1_background", self.t1_background),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("m0_myo", self.m0_myo),
            ("m0_blood", self.m0_blood),
            ("m0_background", self.m0_background),
            ("motion_amplitude", self.motion_amplitude),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if !(self.motion_smoothness > 0.0) {
            return bad("motion_smoothness must be positive".into());
        }
        if self.sequence == SequenceKind::Molli && !(self.molli_b_ratio > 1.0) {
            return bad("molli_b_ratio must exceed 1".into());
        }
        if !(0.0..=1.0).contains(&self.degraded_conf) {
            return bad("degraded_conf must lie in [0, 1]".into());
        }
        if let Some(&f) = self.degraded_frames.iter().find(|&&f| f >= times.len()) {
            return bad(format!("degraded frame {f} does not exist"));
        }
        Ok(())
    }
}

/// Generated case with everything needed to score a reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub spec: PhantomSpec,
    /// Tissue labels in the undeformed geometry.
    pub labels: Raster,
    pub truth_params: ParamMap,
    pub truth_t1: Raster,
    /// Per-frame displacement taking the undeformed phantom to the frame.
    pub truth_fields: Vec<DisplacementField>,
    pub series: Series,
    pub segs: Vec<SegFrame>,
    pub myo: Mask,
    pub lv: Mask,
}

impl PhantomCase {
    /// Truth labels seen through frame `r`'s motion, i.e. in the geometry
    /// that a reconstruction referenced to frame `r` reports.
    pub fn labels_in_frame(&self, r: usize) -> Raster {
        field::warp_nearest(&self.labels, &self.truth_fields[r])
    }

    /// Truth T1 in frame `r`'s geometry.
    pub fn t1_in_frame(&self, r: usize) -> Raster {
        self.labels_in_frame(r).map(|l| self.spec.t1_of_label(l))
    }

    /// Truth myocardium in frame `r`'s geometry.
    pub fn myo_in_frame(&self, r: usize) -> Mask {
        let labels = self.labels_in_frame(r);
        Mask::from_fn(labels.height(), labels.width(), |x, y| {
            labels.get(x, y) == LABEL_MYO
        })
    }
}

/// Separable Gaussian filter with border clamping; kernel truncated at 3σ.
pub fn gaussian_blur(r: &Raster, sigma: f64) -> Raster {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let (h, w) = (r.height() as isize, r.width() as isize);
    let pass = |src: &Raster, horizontal: bool| {
        Raster::from_fn(h as usize, w as usize, |x, y| {
            let mut acc = 0.0;
            for (j, kv) in kernel.iter().enumerate() {
                let o = j as isize - radius;
                let (sx, sy) = if horizontal {
                    ((x as isize + o).clamp(0, w - 1), y as isize)
                } else {
                    (x as isize, (y as isize + o).clamp(0, h - 1))
                };
                acc += kv * src.get(sx as usize, sy as usize);
            }
            acc / norm
        })
    };
    pass(&pass(r, true), false)
}

/// Rician magnitude noise drawn from `rng`:
/// `sqrt((v + n1)^2 + n2^2)` with `n1, n2 ~ N(0, sigma^2)`.
pub fn add_rician_with(values: &Raster, sigma: f64, rng: &mut impl Rng) -> Raster {
    if sigma == 0.0 {
        return values.map(f64::abs);
    }
    let data = values
        .data()
        .iter()
        .map(|&v| {
            let n1: f64 = rng.sample(StandardNormal);
            let n2: f64 = rng.sample(StandardNormal);
            (v + sigma * n1).hypot(sigma * n2)
        })
        .collect();
    Raster::new(values.height(), values.width(), data).expect("same shape")
}

/// Rician magnitude noise from a seed.
pub fn add_rician(values: &Raster, sigma: f64, seed: u64) -> Raster {
    add_rician_with(values, sigma, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Smooth random velocity: Gaussian-filtered white noise on the
/// half-resolution grid, scaled so its peak norm equals `amplitude`.
///
/// The noise is drawn on a grid padded by the kernel radius and cropped, so
/// the field is statistically the same everywhere; filtering the unpadded
/// grid with clamped borders would concentrate the motion at the edges.
pub fn random_velocity(
    height: usize,
    width: usize,
    amplitude: f64,
    smoothness: f64,
    rng: &mut impl Rng,
) -> VelocityField {
    let (hh, hw) = field::half_dims(height, width);
    let sigma = smoothness / 2.0;
    let pad = (3.0 * sigma).ceil() as usize;
    let mut noise = || {
        let white = Raster::from_fn(hh + 2 * pad, hw + 2 * pad, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let smooth = gaussian_blur(&white, sigma);
        Raster::from_fn(hh, hw, |x, y| smooth.get(x + pad, y + pad))
    };
    let vx = noise();
    let vy = noise();
    let v = VelocityField::new(height, width, vx, vy).expect("half-resolution shape");
    let peak = v.max_norm();
    if amplitude == 0.0 || peak == 0.0 {
        return VelocityField::zeros(height, width);
    }
    v.scaled(amplitude / peak)
}

/// Generates a case. All randomness comes from `spec.seed`.
pub fn make_phantom(spec: &PhantomSpec) -> Result<PhantomCase> {
    spec.validate()?;
    let grid = spec.grid()?;
    let (h, w) = (grid.height, grid.width);
    let [cx, cy] = spec.center();
    let labels = Raster::from_fn(h, w, |x, y| {
        let r = (x as f64 - cx).hypot(y as f64 - cy);
        if r >= spec.myo_inner_radius && r <= spec.myo_outer_radius {
            LABEL_MYO
        } else if r < spec.lv_radius {
            LABEL_BLOOD
        } else if r <= spec.body_radius {
            LABEL_BACKGROUND
        } else {
            LABEL_AIR
        }
    });
    let myo = Mask::from_fn(h, w, |x, y| labels.get(x, y) == LABEL_MYO);
    let lv = Mask::from_fn(h, w, |x, y| labels.get(x, y) == LABEL_BLOOD);
    let truth_params =
        ParamMap::from_fn(spec.sequence, h, w, |x, y| spec.params_of_label(labels.get(x, y)));
    let truth_t1 = labels.map(|l| spec.t1_of_label(l));

    let times = spec.times();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth_fields: Vec<DisplacementField> = (0..times.len())
        .map(|_| {
            let v = random_velocity(h, w, spec.motion_amplitude, spec.motion_smoothness, &mut rng);
            if v.is_zero() {
                DisplacementField::zeros(h, w)
            } else {
                field::integrate_svf(&v, field::DEFAULT_STEPS)
            }
        })
        .collect();

    let mut frames = Vec::with_capacity(times.len());
    let mut segs = Vec::with_capacity(times.len());
    let myo_r = myo.to_raster();
    let lv_r = lv.to_raster();
    for (i, (&t, d)) in times.iter().zip(&truth_fields).enumerate() {
        let clean = crate::signal::synth_frame(&truth_params, t, true).values;
        let moved = field::warp_image(&clean, d);
        let values = add_rician_with(&moved, spec.noise_sigma, &mut rng);
        frames.push(Frame { values, t_ms: t });

        let seg_myo = Mask::threshold(&field::warp_image(&myo_r, d), 0.5);
        let seg_lv = Mask::threshold(&field::warp_image(&lv_r, d), 0.5);
        let conf = if spec.degraded_frames.contains(&i) {
            Raster::from_fn(h, w, |x, y| {
                if seg_myo.get(x, y) {
                    spec.degraded_conf
                } else {
                    1.0
                }
            })
        } else {
            Raster::filled(h, w, 1.0)
        };
        segs.push(SegFrame::new(seg_myo, seg_lv, conf)?);
    }
    let series = Series::new(spec.sequence, grid, frames, spec.slice_id.clone())?;
    Ok(PhantomCase {
        spec: spec.clone(),
        labels,
        truth_params,
        truth_t1,
        truth_fields,
        series,
        segs,
        myo,
        lv,
    })
}

/// Writes the series with segmentations to `dir`, and the ground truth
/// (spec, labels, T1 and per-frame displacements) to `dir/truth`.
/// Returns the series manifest path.
pub fn write_case(case: &PhantomCase, dir: &Path) -> Result<PathBuf> {
    let manifest = imaging::write_series(dir, &case.series, Some(&case.segs))?;
    let truth = dir.join(TRUTH_DIR);
    fs::create_dir_all(&truth).map_err(|e| Error::io(&truth, e))?;
    imaging::save_map(&case.labels, &truth.join("labels.f32"))?;
    imaging::save_map(&case.truth_t1, &truth.join("t1.f32"))?;
    for (i, d) in case.truth_fields.iter().enumerate() {
        imaging::save_map(&d.dx, &truth.join(format!("dx_{i:02}.f32")))?;
        imaging::save_map(&d.dy, &truth.join(format!("dy_{i:02}.f32")))?;
    }
    let path = truth.join(TRUTH_FILE);
    let text = serde_json::to_string_pretty(&case.spec).expect("spec serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a case written by [`write_case`]. The truth is regenerated from the
/// stored spec and checked against the stored labels, so a case directory
/// with an edited spec is rejected rather than silently mis-scored.
pub fn read_case(dir: &Path) -> Result<PhantomCase> {
    let path = dir.join(TRUTH_DIR).join(TRUTH_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let spec: PhantomSpec = serde_json::from_str(&text).map_err(|source| Error::Manifest {
        path: path.clone(),
        source,
    })?;
    let mut case = make_phantom(&spec)?;
    let labels = imaging::load_map(
        &dir.join(TRUTH_DIR).join("labels.f32"),
        spec.height,
        spec.width,
    )?;
    if labels != case.labels {
        return Err(Error::InvalidInput(format!(
            "{}: stored labels do not match the stored spec",
            dir.display()
        )));
    }
    // Frames on disk are float32; use them as stored.
    let (series, segs) = imaging::load_case(dir)?;
    case.series = series;
    if let Some(segs) = segs {
        case.segs = segs;
    }
    Ok(case)
}
