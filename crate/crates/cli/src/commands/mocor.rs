//! `t1map mocor`: joint motion correction and parameter mapping.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use t1map_core::confidence::SegFrame;
use t1map_core::field::JacobianStats;
use t1map_core::imaging::{write_series, Mask, Raster, Series};
use t1map_core::metrics::{write_metrics_csv, MetricsRow};
use t1map_core::mocor::{run_mbss_t1, CaseResult, MocorConfig};

use super::{alignment, case_name, elapsed_s, for_each_case, load_normalized, valid_mean};
use crate::output::{
    self, case_dirs, create_dir, CORRECTED_DIR, DIAGNOSTICS_FILE, LOSS_TRACE_FILE, METRICS_FILE,
};
use crate::{config, CliResult, MocorArgs, RunManifest};

pub const METHOD: &str = "mocor";

#[derive(Debug, Serialize)]
struct Diagnostics<'a> {
    reference: usize,
    members: &'a [usize],
    segmentation_active: bool,
    mean_conf: &'a [f64],
    k_pixels: usize,
    initial_loss: f64,
    final_loss: f64,
    jacobians: &'a [JacobianStats],
    fold_fractions: Vec<f64>,
}

pub fn run(args: &MocorArgs) -> CliResult<()> {
    let start = Instant::now();
    let config = config::resolve(args.config.as_deref(), &args.overrides)?;
    let dirs = case_dirs(&args.series, &args.out)?;
    create_dir(&args.out)?;
    for_each_case(&args.series, &dirs, |input, dir| mocor_case(input, dir, &config, args))?;
    let mut snapshot = serde_json::to_value(&config).expect("config serializes");
    snapshot["ring"] = format!("{:?}", args.segments.ring).to_lowercase().into();
    snapshot["ref_angle"] = args.segments.ref_angle.into();
    RunManifest::new(METHOD, snapshot, args.series.clone(), &args.out, config.seed, elapsed_s(start))
        .write_atomic(&args.out)
}

/// Empty masks with zero confidence: every frame fails the gate, so the run
/// falls back to the fit and smoothness terms over the whole image.
fn placeholder_segs(series: &Series) -> Vec<SegFrame> {
    let grid = series.grid();
    let empty = Mask::empty(grid.height, grid.width);
    let zero = Raster::zeros(grid.height, grid.width);
    (0..series.len())
        .map(|_| SegFrame::new(empty.clone(), empty.clone(), zero.clone()).expect("shapes agree"))
        .collect()
}

fn mocor_case(input: &Path, dir: &Path, config: &MocorConfig, args: &MocorArgs) -> CliResult<()> {
    let (series, segs) = load_normalized(input)?;
    let segs = segs.unwrap_or_else(|| {
        log::warn!(
            "{} has no segmentations; segmentation loss disabled",
            input.display()
        );
        placeholder_segs(&series)
    });
    let res = run_mbss_t1(&series, &segs, config)?;
    create_dir(dir)?;
    write_outputs(dir, &series, &res)?;

    let r = res.reference;
    let grid = series.grid();
    let region = if segs[r].myo.count() > 0 {
        segs[r].myo.clone()
    } else {
        Mask::full(grid.height, grid.width)
    };
    let (dice, hd_mm) = alignment(&segs, Some(&res.fields), r, &grid)?;
    let moving: Vec<&JacobianStats> = (0..res.jacobians.len())
        .filter(|&i| i != r)
        .map(|i| &res.jacobians[i])
        .collect();
    let mean_det_j = (!moving.is_empty())
        .then(|| moving.iter().map(|j| j.mean_det).sum::<f64>() / moving.len() as f64);
    let row = MetricsRow {
        case: case_name(input),
        slice: series.slice_id().to_string(),
        method: METHOD.to_string(),
        r2_mean: valid_mean(&res.maps.r2, &region, &res.maps.invalid),
        dice,
        hd_mm,
        mean_det_j,
        folds: Some(res.jacobians.iter().map(|j| j.nonpositive_count).sum()),
        t1_segments: output::reference_segments(
            &res.maps.t1,
            &res.maps.invalid,
            Some(&segs),
            Some(r),
            &args.segments,
        )?,
    };
    write_metrics_csv(&dir.join(METRICS_FILE), &[row])?;
    log::info!("mocor {} -> {} (reference frame {r})", input.display(), dir.display());
    Ok(())
}

fn write_outputs(dir: &Path, series: &Series, res: &CaseResult) -> CliResult<()> {
    output::write_maps(dir, &res.maps)?;
    output::write_fields(dir, &res.fields, &res.velocities)?;
    let corrected = series.with_values(res.corrected_frames.clone())?;
    write_series(&dir.join(CORRECTED_DIR), &corrected, None)?;
    output::write_loss_trace(&dir.join(LOSS_TRACE_FILE), &res.loss_trace)?;
    let diagnostics = Diagnostics {
        reference: res.reference,
        members: &res.selection.members,
        segmentation_active: res.selection.segmentation_active(),
        mean_conf: &res.selection.mean_conf,
        k_pixels: res.selection.mask().count(),
        initial_loss: res.loss_trace.first().map_or(f64::NAN, |l| l.total),
        final_loss: res.loss_trace.last().map_or(f64::NAN, |l| l.total),
        jacobians: &res.jacobians,
        fold_fractions: res.jacobians.iter().map(|j| j.fold_fraction()).collect(),
    };
    output::write_json(&dir.join(DIAGNOSTICS_FILE), &diagnostics)
}
