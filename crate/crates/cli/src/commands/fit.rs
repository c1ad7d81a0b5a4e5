//! `t1map fit`: pixel-wise curve fit without motion correction.

use std::path::Path;
use std::time::Instant;

use serde_json::json;
use t1map_core::confidence::select;
use t1map_core::curvefit::fit_map;
use t1map_core::imaging::{load_map, Mask};
use t1map_core::metrics::{write_metrics_csv, MetricsRow};
use t1map_core::mocor::MocorConfig;

use super::{alignment, case_name, elapsed_s, for_each_case, load_normalized, valid_mean};
use crate::output::{self, case_dirs, create_dir, METRICS_FILE};
use crate::{CliResult, FitArgs, RunManifest};

pub const METHOD: &str = "fit";

pub fn run(args: &FitArgs) -> CliResult<()> {
    let start = Instant::now();
    let dirs = case_dirs(&args.series, &args.out)?;
    create_dir(&args.out)?;
    for_each_case(&args.series, &dirs, |input, dir| fit_case(input, dir, args))?;
    let config = json!({
        "mask": args.mask,
        "ring": format!("{:?}", args.segments.ring).to_lowercase(),
        "ref_angle": args.segments.ref_angle,
    });
    RunManifest::new(METHOD, config, args.series.clone(), &args.out, args.seed, elapsed_s(start))
        .write_atomic(&args.out)
}

fn fit_case(input: &Path, dir: &Path, args: &FitArgs) -> CliResult<()> {
    let (series, segs) = load_normalized(input)?;
    let grid = series.grid();
    let mask = match &args.mask {
        Some(path) => Some(Mask::from_binary_raster(&load_map(path, grid.height, grid.width)?)?),
        None => None,
    };
    let maps = fit_map(&series, mask.as_ref())?;
    create_dir(dir)?;
    output::write_maps(dir, &maps)?;

    // The reference frame is the one motion correction would register to.
    let defaults = MocorConfig::default();
    let reference = match &segs {
        Some(s) => Some(select(s, defaults.alpha, defaults.gamma)?.reference),
        None => None,
    };
    let summary_region = match (&mask, &segs, reference) {
        (Some(m), _, _) => m.clone(),
        (None, Some(s), Some(r)) if s[r].myo.count() > 0 => s[r].myo.clone(),
        _ => Mask::full(grid.height, grid.width),
    };
    let (dice, hd_mm) = match (&segs, reference) {
        (Some(s), Some(r)) => alignment(s, None, r, &grid)?,
        _ => (None, None),
    };
    let row = MetricsRow {
        case: case_name(input),
        slice: series.slice_id().to_string(),
        method: METHOD.to_string(),
        r2_mean: valid_mean(&maps.r2, &summary_region, &maps.invalid),
        dice,
        hd_mm,
        mean_det_j: None,
        folds: None,
        t1_segments: output::reference_segments(
            &maps.t1,
            &maps.invalid,
            segs.as_deref(),
            reference,
            &args.segments,
        )?,
    };
    write_metrics_csv(&dir.join(METRICS_FILE), &[row])?;
    log::info!("fit {} -> {}", input.display(), dir.display());
    Ok(())
}
