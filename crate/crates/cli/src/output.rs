//! Writers and readers for command outputs.

use std::fs;
use std::path::{Path, PathBuf};

use t1map_core::confidence::SegFrame;
use t1map_core::curvefit::FitMaps;
use t1map_core::field::{DisplacementField, VelocityField};
use t1map_core::imaging::{load_map, render_ppm, save_map, save_mask, Mask, Raster};
use t1map_core::metrics::{aha16_labels, segmental_means};
use t1map_core::mocor::LossRecord;
use t1map_core::signal::channel_names;

use crate::{CliError, CliResult, SegmentArgs};

pub const T1_FILE: &str = "t1.f32";
pub const R2_FILE: &str = "r2.f32";
pub const INVALID_FILE: &str = "invalid.f32";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LOSS_TRACE_FILE: &str = "loss_trace.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const FIELDS_DIR: &str = "fields";
pub const CORRECTED_DIR: &str = "corrected";

/// Display range of the T1 preview, in ms.
const T1_DISPLAY_MS: (f64, f64) = (0.0, 2500.0);

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::usage(anyhow::anyhow!("creating {}: {e}", dir.display())))
}

/// Output directory of input `index`: `out` itself for a single input,
/// otherwise a subdirectory named after the input.
pub fn case_dirs(inputs: &[PathBuf], out: &Path) -> CliResult<Vec<PathBuf>> {
    if inputs.len() == 1 {
        return Ok(vec![out.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = Vec::with_capacity(inputs.len());
    for input in inputs {
        let name = input
            .file_name()
            .ok_or_else(|| CliError::usage(anyhow::anyhow!("cannot name output for {}", input.display())))?;
        let dir = out.join(name);
        if dirs.contains(&dir) {
            return Err(CliError::usage(anyhow::anyhow!(
                "two inputs share the name {}",
                name.to_string_lossy()
            )));
        }
        dirs.push(dir);
    }
    Ok(dirs)
}

pub fn invert(mask: &Mask) -> Mask {
    Mask::from_fn(mask.height(), mask.width(), |x, y| !mask.get(x, y))
}

/// T1, R², invalid-pixel and parameter maps as float32, plus PPM previews.
pub fn write_maps(dir: &Path, maps: &FitMaps) -> CliResult<()> {
    save_map(&maps.t1, &dir.join(T1_FILE))?;
    save_map(&maps.r2, &dir.join(R2_FILE))?;
    save_mask(&maps.invalid, &dir.join(INVALID_FILE))?;
    let names = channel_names(maps.params.kind());
    for (name, channel) in names.iter().zip(maps.params.channels()) {
        save_map(channel, &dir.join(format!("param_{name}.f32")))?;
    }
    let valid = invert(&maps.invalid);
    render_ppm(&maps.t1, T1_DISPLAY_MS, Some(&valid), &dir.join("t1.ppm"))?;
    render_ppm(&maps.r2, (0.0, 1.0), Some(&valid), &dir.join("r2.ppm"))?;
    Ok(())
}

pub struct ResultMaps {
    pub t1: Raster,
    pub r2: Raster,
    pub invalid: Mask,
}

pub fn read_maps(dir: &Path, height: usize, width: usize) -> CliResult<Option<ResultMaps>> {
    if !dir.join(T1_FILE).exists() {
        return Ok(None);
    }
    Ok(Some(ResultMaps {
        t1: load_map(&dir.join(T1_FILE), height, width)?,
        r2: load_map(&dir.join(R2_FILE), height, width)?,
        invalid: Mask::from_binary_raster(&load_map(&dir.join(INVALID_FILE), height, width)?)?,
    }))
}

fn field_path(dir: &Path, component: &str, i: usize) -> PathBuf {
    dir.join(FIELDS_DIR).join(format!("{component}_{i:02}.f32"))
}

/// Full-resolution displacements and half-resolution velocities per frame.
pub fn write_fields(
    dir: &Path,
    fields: &[DisplacementField],
    velocities: &[VelocityField],
) -> CliResult<()> {
    create_dir(&dir.join(FIELDS_DIR))?;
    for (i, (d, v)) in fields.iter().zip(velocities).enumerate() {
        save_map(&d.dx, &field_path(dir, "dx", i))?;
        save_map(&d.dy, &field_path(dir, "dy", i))?;
        save_map(&v.vx, &field_path(dir, "vx", i))?;
        save_map(&v.vy, &field_path(dir, "vy", i))?;
    }
    Ok(())
}

/// Displacements written by [`write_fields`], or `None` when the directory
/// holds none.
pub fn read_fields(
    dir: &Path,
    frames: usize,
    height: usize,
    width: usize,
) -> CliResult<Option<Vec<DisplacementField>>> {
    if !dir.join(FIELDS_DIR).is_dir() {
        return Ok(None);
    }
    (0..frames)
        .map(|i| {
            let dx = load_map(&field_path(dir, "dx", i), height, width)?;
            let dy = load_map(&field_path(dir, "dy", i), height, width)?;
            Ok(DisplacementField::new(dx, dy)?)
        })
        .collect::<CliResult<Vec<_>>>()
        .map(Some)
}

pub fn write_loss_trace(path: &Path, trace: &[LossRecord]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::usage)?;
    for r in trace {
        w.serialize(r).map_err(CliError::usage)?;
    }
    w.flush()
        .map_err(|e| CliError::usage(anyhow::anyhow!("writing {}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text)
        .map_err(|e| CliError::usage(anyhow::anyhow!("writing {}: {e}", path.display())))
}

/// Mean pixel position `(x, y)` of a mask.
pub fn centroid(mask: &Mask) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

/// Mean T1 per AHA segment of `myo`, centred on the LV cavity (or on the
/// myocardium when the cavity mask is empty).
pub fn segment_means(
    t1: &Raster,
    invalid: &Mask,
    myo: &Mask,
    lv: &Mask,
    args: &SegmentArgs,
) -> CliResult<Vec<Option<f64>>> {
    let Some(center) = centroid(lv).or_else(|| centroid(myo)) else {
        return Ok(vec![None; t1map_core::metrics::SEGMENTS]);
    };
    let labels = aha16_labels(myo, center, args.ref_angle, args.ring.into());
    Ok(segmental_means(t1, &labels, Some(invalid))?.segment_means)
}

/// Segment means over the reference frame's masks, when segmentations exist.
pub fn reference_segments(
    t1: &Raster,
    invalid: &Mask,
    segs: Option<&[SegFrame]>,
    reference: Option<usize>,
    args: &SegmentArgs,
) -> CliResult<Vec<Option<f64>>> {
    match (segs, reference) {
        (Some(segs), Some(r)) => segment_means(t1, invalid, &segs[r].myo, &segs[r].lv, args),
        _ => Ok(vec![None; t1map_core::metrics::SEGMENTS]),
    }
}
