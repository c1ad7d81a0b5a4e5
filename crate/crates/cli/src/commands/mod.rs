//! One module per subcommand, plus helpers they share.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use t1map_core::confidence::SegFrame;
use t1map_core::field::{warp_image, DisplacementField};
use t1map_core::imaging::{load_case, normalize_minmax, Grid2D, Mask, Series};
use t1map_core::metrics::{dice, hausdorff, masked_mean};

use crate::{CliError, CliResult};

pub mod eval;
pub mod fit;
pub mod icc;
pub mod mocor;
pub mod phantom;

/// Loads a series with its optional segmentations and rescales intensities
/// to [0, 1] over the whole sequence, which the loss weights assume.
pub fn load_normalized(input: &Path) -> CliResult<(Series, Option<Vec<SegFrame>>)> {
    let (series, segs) = load_case(input)?;
    Ok((normalize_minmax(&series)?, segs))
}

/// Runs `job` on every input concurrently and reports the first failure in
/// input order.
pub fn for_each_case<F>(inputs: &[PathBuf], dirs: &[PathBuf], job: F) -> CliResult<()>
where
    F: Fn(&Path, &Path) -> CliResult<()> + Sync,
{
    let results: Vec<CliResult<()>> = inputs
        .par_iter()
        .zip(dirs)
        .map(|(input, dir)| {
            job(input, dir).map_err(|e| CliError {
                code: e.code,
                error: e.error.context(format!("case {}", input.display())),
            })
        })
        .collect();
    results.into_iter().collect()
}

pub fn elapsed_s(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

/// Case label of an input: the directory name (or the manifest's parent).
pub fn case_name(input: &Path) -> String {
    let dir = if input.is_dir() {
        input
    } else {
        input.parent().unwrap_or(input)
    };
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Myocardium of frame `i` resampled into the reference geometry.
pub fn registered_myo(seg: &SegFrame, field: Option<&DisplacementField>) -> Mask {
    match field {
        Some(d) => Mask::threshold(&warp_image(&seg.myo.to_raster(), d), 0.5),
        None => seg.myo.clone(),
    }
}

/// Mean Dice and Hausdorff distance (mm) of every non-reference frame's
/// registered myocardium against the reference myocardium. Frames with an
/// empty mask are skipped.
pub fn alignment(
    segs: &[SegFrame],
    fields: Option<&[DisplacementField]>,
    reference: usize,
    grid: &Grid2D,
) -> CliResult<(Option<f64>, Option<f64>)> {
    let target = &segs[reference].myo;
    if target.count() == 0 {
        return Ok((None, None));
    }
    let (mut d_sum, mut h_sum, mut n) = (0.0, 0.0, 0usize);
    for (i, seg) in segs.iter().enumerate() {
        if i == reference || seg.myo.count() == 0 {
            continue;
        }
        let moved = registered_myo(seg, fields.map(|f| &f[i]));
        if moved.count() == 0 {
            continue;
        }
        d_sum += dice(&moved, target)?;
        h_sum += hausdorff(&moved, target, grid)?;
        n += 1;
    }
    Ok(if n == 0 {
        (None, None)
    } else {
        (Some(d_sum / n as f64), Some(h_sum / n as f64))
    })
}

/// Mean of `values` over the valid pixels of `region`.
pub fn valid_mean(values: &t1map_core::imaging::Raster, region: &Mask, invalid: &Mask) -> Option<f64> {
    masked_mean(values, &region.intersection(&crate::output::invert(invalid)))
}
