//! `t1map eval`: metrics of a result against a truth directory.
//!
//! For every frame, the result's registered myocardium (segmentation warped
//! by the result's field, or unwarped when the result has none) is compared
//! with the truth's registered myocardium. For a phantom that is the true
//! myocardium in the reference frame's geometry; otherwise it is the truth
//! directory's own segmentation warped by its own fields. One row per frame
//! is followed by a summary row.

use std::fs;
use std::path::{Path, PathBuf};

use t1map_core::confidence::select;
use t1map_core::field::{jacobian_stats, DisplacementField};
use t1map_core::imaging::{load_case, Mask};
use t1map_core::metrics::{dice, hausdorff, write_metrics_csv, MetricsRow, SEGMENTS};
use t1map_core::mocor::MocorConfig;
use t1map_core::phantom::{read_case, TRUTH_DIR, TRUTH_FILE};

use super::{case_name, registered_myo, valid_mean};
use crate::output::{self, read_fields, read_maps, DIAGNOSTICS_FILE};
use crate::{CliError, CliResult, EvalArgs, RunManifest};

fn as_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

/// Reference frame recorded by a motion-correction run, if any.
fn recorded_reference(result: &Path) -> CliResult<Option<usize>> {
    let path = result.join(DIAGNOSTICS_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::usage(anyhow::anyhow!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(anyhow::anyhow!("{}: {e}", path.display())))?;
    Ok(value["reference"].as_u64().map(|r| r as usize))
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn run(args: &EvalArgs) -> CliResult<()> {
    let truth_dir = as_dir(&args.truth);
    let result_dir = as_dir(&args.result);
    let (series, segs) = load_case(&args.truth)?;
    let segs = segs.ok_or_else(|| {
        CliError::usage(anyhow::anyhow!("{} has no segmentations", args.truth.display()))
    })?;
    let grid = series.grid();
    let (h, w, n) = (grid.height, grid.width, series.len());

    let defaults = MocorConfig::default();
    let r = match recorded_reference(&result_dir)? {
        Some(r) if r < n => r,
        Some(r) => {
            return Err(CliError::usage(anyhow::anyhow!(
                "recorded reference frame {r} is outside the {n}-frame series"
            )))
        }
        None => select(&segs, defaults.alpha, defaults.gamma)?.reference,
    };
    let result_fields = read_fields(&result_dir, n, h, w)?;
    let truth_masks: Vec<Mask> = if truth_dir.join(TRUTH_DIR).join(TRUTH_FILE).exists() {
        let myo = read_case(&truth_dir)?.myo_in_frame(r);
        vec![myo; n]
    } else {
        let truth_fields = read_fields(&truth_dir, n, h, w)?;
        (0..n)
            .map(|i| registered_myo(&segs[i], truth_fields.as_ref().map(|f| &f[i])))
            .collect()
    };

    let method = RunManifest::read(&result_dir)
        .map(|m| m.command)
        .unwrap_or_else(|_| "input".to_string());
    let case = case_name(&args.truth);
    let mut rows = Vec::with_capacity(n + 1);
    let (mut dices, mut hds, mut dets, mut folds) = (Vec::new(), Vec::new(), Vec::new(), 0usize);
    for i in 0..n {
        let field: Option<&DisplacementField> = result_fields.as_ref().map(|f| &f[i]);
        let moved = registered_myo(&segs[i], field);
        let defined = moved.count() > 0 && truth_masks[i].count() > 0;
        let d = defined.then(|| dice(&moved, &truth_masks[i])).transpose()?;
        let hd = defined.then(|| hausdorff(&moved, &truth_masks[i], &grid)).transpose()?;
        let stats = field.map(jacobian_stats).transpose()?;
        if i != r {
            dices.extend(d);
            hds.extend(hd);
            dets.extend(stats.map(|s| s.mean_det));
        }
        folds += stats.map_or(0, |s| s.nonpositive_count);
        rows.push(MetricsRow {
            case: case.clone(),
            slice: format!("{}/frame_{i:02}", series.slice_id()),
            method: method.clone(),
            r2_mean: None,
            dice: d,
            hd_mm: hd,
            mean_det_j: stats.map(|s| s.mean_det),
            folds: stats.map(|s| s.nonpositive_count),
            t1_segments: vec![None; SEGMENTS],
        });
    }

    let maps = read_maps(&result_dir, h, w)?;
    let reference_myo = &truth_masks[r];
    let (r2_mean, t1_segments) = match &maps {
        Some(m) => (
            valid_mean(&m.r2, reference_myo, &m.invalid),
            output::segment_means(&m.t1, &m.invalid, reference_myo, &segs[r].lv, &args.segments)?,
        ),
        None => (None, vec![None; SEGMENTS]),
    };
    rows.push(MetricsRow {
        case,
        slice: series.slice_id().to_string(),
        method,
        r2_mean,
        dice: mean(&dices),
        hd_mm: mean(&hds),
        mean_det_j: mean(&dets),
        folds: result_fields.is_some().then_some(folds),
        t1_segments,
    });
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        output::create_dir(parent)?;
    }
    write_metrics_csv(&args.out, &rows)?;
    log::info!("eval {} vs {} -> {}", result_dir.display(), truth_dir.display(), args.out.display());
    Ok(())
}
