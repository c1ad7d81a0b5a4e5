//! Per-pixel least-squares estimation of recovery parameters.
//!
//! Magnitude samples lose the sign of the inverted signal. Each fit therefore
//! tries every polarity assignment that negates the `k` earliest samples
//! (`k = 0..N`), fits the signed model with Levenberg-Marquardt from three
//! seeds, and keeps the lowest residual.

use std::f64::consts::LN_2;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{Mask, Raster, SequenceKind, Series};
use crate::signal::{
    molli_gradient, molli_signal, stone_gradient, stone_signal, MolliParams, ParamMap,
    RecoveryParams, StoneParams, AMPLITUDE_BOUND_FACTOR, T1_BOUNDS_MS,
};

/// Value written into map pixels that were not (validly) fitted.
pub const INVALID_VALUE: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Bounds on T1 (STONE) or T1* (MOLLI), in the unit of the sample times.
    pub t1_bounds: (f64, f64),
    /// Amplitudes are bounded above by this multiple of the largest sample.
    pub amplitude_factor: f64,
    pub initial_damping: f64,
    pub max_iterations: usize,
    /// Relative parameter change below which the solver stops.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            t1_bounds: T1_BOUNDS_MS,
            amplitude_factor: AMPLITUDE_BOUND_FACTOR,
            initial_damping: 1e-3,
            max_iterations: 200,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub params: RecoveryParams,
    /// Tissue T1; `None` when a MOLLI fit has `B/A <= 1`.
    pub corrected_t1: Option<f64>,
    pub r2: f64,
    pub residual_norm: f64,
    pub polarity_flips: usize,
    pub converged: bool,
    /// No usable signal (all-zero or flat samples).
    pub degenerate: bool,
}

impl FitResult {
    pub fn is_valid(&self) -> bool {
        !self.degenerate && self.corrected_t1.is_some() && self.r2.is_finite()
    }
}

/// `1 - SS_res / SS_tot`.
pub fn r_squared(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() || observed.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "r_squared needs two equal-length series of at least 2 values (got {} and {})",
            observed.len(),
            predicted.len()
        )));
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_tot: f64 = observed.iter().map(|o| (o - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Undefined("R² of a constant series".into()));
    }
    let ss_res: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| (o - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

struct LmOutcome<const P: usize> {
    params: [f64; P],
    cost: f64,
    converged: bool,
}

/// Solves the `P x P` system `a x = b` by Gaussian elimination with partial
/// pivoting. Returns `None` for a singular matrix.
fn solve<const P: usize>(mut a: [[f64; P]; P], mut b: [f64; P]) -> Option<[f64; P]> {
    for col in 0..P {
        let pivot = (col..P).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..P {
            let f = a[row][col] / a[col][col];
            for k in col..P {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; P];
    for row in (0..P).rev() {
        let mut s = b[row];
        for k in row + 1..P {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

/// Box-constrained Levenberg-Marquardt with Marquardt diagonal scaling.
/// `on_accept` sees the cost after every accepted step.
fn levenberg_marquardt<const P: usize>(
    model: impl Fn(&[f64; P], f64) -> (f64, [f64; P]),
    times: &[f64],
    targets: &[f64],
    init: [f64; P],
    lower: [f64; P],
    upper: [f64; P],
    opts: &FitOptions,
    mut on_accept: impl FnMut(f64),
) -> LmOutcome<P> {
    let project = |p: [f64; P]| {
        let mut q = p;
        for k in 0..P {
            q[k] = q[k].clamp(lower[k], upper[k]);
        }
        q
    };
    let cost_of = |p: &[f64; P]| -> f64 {
        times
            .iter()
            .zip(targets)
            .map(|(&t, &y)| (model(p, t).0 - y).powi(2))
            .sum()
    };

    let mut p = project(init);
    let mut cost = cost_of(&p);
    let mut damping = opts.initial_damping;
    let mut converged = false;

    for _ in 0..opts.max_iterations {
        if cost == 0.0 {
            converged = true;
            break;
        }
        let mut jtj = [[0.0; P]; P];
        let mut jtr = [0.0; P];
        for (&t, &y) in times.iter().zip(targets) {
            let (f, g) = model(&p, t);
            let r = f - y;
            for i in 0..P {
                jtr[i] += g[i] * r;
                for j in 0..P {
                    jtj[i][j] += g[i] * g[j];
                }
            }
        }
        let max_diag = (0..P).map(|i| jtj[i][i]).fold(0.0, f64::max);
        if max_diag == 0.0 {
            converged = true;
            break;
        }
        let mut a = jtj;
        for i in 0..P {
            a[i][i] += damping * jtj[i][i].max(1e-12 * max_diag);
        }
        let mut rhs = [0.0; P];
        for i in 0..P {
            rhs[i] = -jtr[i];
        }
        let candidate = solve(a, rhs).map(|step| {
            let mut q = p;
            for k in 0..P {
                q[k] += step[k];
            }
            project(q)
        });
        match candidate {
            Some(q) => {
                let new_cost = cost_of(&q);
                if new_cost < cost {
                    let rel = (0..P)
                        .map(|k| (q[k] - p[k]).abs() / (p[k].abs() + opts.tolerance))
                        .fold(0.0, f64::max);
                    p = q;
                    cost = new_cost;
                    on_accept(cost);
                    damping = (damping / 10.0).max(1e-15);
                    if rel < opts.tolerance {
                        converged = true;
                        break;
                    }
                } else {
                    damping *= 10.0;
                }
            }
            None => damping *= 10.0,
        }
        if damping > 1e16 {
            // no descent direction left at working precision
            converged = true;
            break;
        }
    }
    LmOutcome {
        params: p,
        cost,
        converged,
    }
}

/// Indices of `times` in ascending order (stable for equal times).
fn time_order(times: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    order
}

fn degenerate_result(kind: SequenceKind) -> FitResult {
    let params = match kind {
        SequenceKind::Molli => RecoveryParams::Molli(MolliParams {
            a: INVALID_VALUE,
            b: INVALID_VALUE,
            t1_star: INVALID_VALUE,
        }),
        SequenceKind::Stone => RecoveryParams::Stone(StoneParams {
            m0: INVALID_VALUE,
            t1: INVALID_VALUE,
        }),
    };
    FitResult {
        params,
        corrected_t1: None,
        r2: 0.0,
        residual_norm: 0.0,
        polarity_flips: 0,
        converged: false,
        degenerate: true,
    }
}

/// Fits the signal model of `kind` to magnitude `samples` taken at `times`.
pub fn fit_pixel(samples: &[f64], times: &[f64], kind: SequenceKind) -> Result<FitResult> {
    fit_pixel_with(samples, times, kind, &FitOptions::default())
}

pub fn fit_pixel_with(
    samples: &[f64],
    times: &[f64],
    kind: SequenceKind,
    opts: &FitOptions,
) -> Result<FitResult> {
    fit_pixel_traced(samples, times, kind, opts, |_| {})
}

fn fit_pixel_traced(
    samples: &[f64],
    times: &[f64],
    kind: SequenceKind,
    opts: &FitOptions,
    mut on_accept: impl FnMut(f64),
) -> Result<FitResult> {
    let n = samples.len();
    if n != times.len() {
        return Err(Error::InvalidInput(format!(
            "{n} samples but {} times",
            times.len()
        )));
    }
    if n < kind.min_samples() {
        return Err(Error::InvalidInput(format!(
            "{kind} fit needs at least {} samples, got {n}",
            kind.min_samples()
        )));
    }
    if let Some(i) = samples.iter().position(|&s| !(s >= 0.0) || !s.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "sample {i} = {} is not a finite magnitude",
            samples[i]
        )));
    }
    let max_obs = samples.iter().cloned().fold(0.0, f64::max);
    if max_obs == 0.0 {
        return Ok(degenerate_result(kind));
    }

    let order = time_order(times);
    let (t1_lo, t1_hi) = opts.t1_bounds;
    let amp_hi = opts.amplitude_factor * max_obs;
    let amp_lo = 1e-12 * max_obs;

    // seeds: zero crossing near the smallest magnitude, amplitude from the last sample
    let i_min = order
        .iter()
        .copied()
        .min_by(|&a, &b| samples[a].total_cmp(&samples[b]))
        .expect("non-empty");
    let t1_seed = (times[i_min] / LN_2).clamp(t1_lo, t1_hi);
    let amp_seed = samples[*order.last().expect("non-empty")].clamp(amp_lo, amp_hi);
    let t1_seeds = [t1_seed, (0.5 * t1_seed).max(t1_lo), (2.0 * t1_seed).min(t1_hi)];

    let mut signed = vec![0.0; n];
    let mut best: Option<(f64, Vec<f64>, usize, bool)> = None;
    for k in 0..n {
        for (rank, &i) in order.iter().enumerate() {
            signed[i] = if rank < k { -samples[i] } else { samples[i] };
        }
        for &seed in &t1_seeds {
            let (params, cost, converged) = match kind {
                SequenceKind::Stone => {
                    let out = levenberg_marquardt(
                        |p: &[f64; 2], t| {
                            let q = StoneParams { m0: p[0], t1: p[1] };
                            (stone_signal(&q, t), stone_gradient(&q, t))
                        },
                        times,
                        &signed,
                        [amp_seed, seed],
                        [amp_lo, t1_lo],
                        [amp_hi, t1_hi],
                        opts,
                        &mut on_accept,
                    );
                    (out.params.to_vec(), out.cost, out.converged)
                }
                SequenceKind::Molli => {
                    let out = levenberg_marquardt(
                        |p: &[f64; 3], t| {
                            let q = MolliParams {
                                a: p[0],
                                b: p[1],
                                t1_star: p[2],
                            };
                            (molli_signal(&q, t), molli_gradient(&q, t))
                        },
                        times,
                        &signed,
                        [amp_seed, (2.0 * amp_seed).min(amp_hi), seed],
                        [amp_lo, amp_lo, t1_lo],
                        [amp_hi, amp_hi, t1_hi],
                        opts,
                        &mut on_accept,
                    );
                    (out.params.to_vec(), out.cost, out.converged)
                }
            };
            if best.as_ref().map_or(true, |b| cost < b.0) {
                best = Some((cost, params, k, converged));
            }
        }
    }
    let (cost, params, flips, converged) = best.expect("at least one candidate");
    let params = RecoveryParams::from_slice(kind, &params);

    for (rank, &i) in order.iter().enumerate() {
        signed[i] = if rank < flips { -samples[i] } else { samples[i] };
    }
    let predicted: Vec<f64> = times.iter().map(|&t| params.signal(t)).collect();
    let (r2, degenerate) = match r_squared(&signed, &predicted) {
        Ok(r2) => (r2, false),
        Err(_) => (0.0, true),
    };
    Ok(FitResult {
        params,
        corrected_t1: params.corrected_t1().ok(),
        r2,
        residual_norm: cost.sqrt(),
        polarity_flips: flips,
        converged,
        degenerate,
    })
}

/// Parameter, T1 and R² maps of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct FitMaps {
    pub params: ParamMap,
    pub t1: Raster,
    pub r2: Raster,
    /// Pixels outside the mask, degenerate, or non-physical.
    pub invalid: Mask,
}

/// Fits every pixel inside `mask` (or every pixel), in parallel. Output does
/// not depend on thread scheduling.
pub fn fit_map(series: &Series, mask: Option<&Mask>) -> Result<FitMaps> {
    fit_map_with(series, mask, &FitOptions::default())
}

pub fn fit_map_with(series: &Series, mask: Option<&Mask>, opts: &FitOptions) -> Result<FitMaps> {
    let grid = series.grid();
    if let Some(m) = mask {
        if m.height() != grid.height || m.width() != grid.width {
            return Err(Error::GridMismatch("fit mask does not match series".into()));
        }
    }
    let kind = series.kind();
    let times = series.times();
    let results: Vec<Option<FitResult>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if mask.map_or(true, |m| m.data()[i]) {
                fit_pixel_with(&series.samples_at(i), &times, kind, opts).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;

    let (h, w) = (grid.height, grid.width);
    let mut params = ParamMap::uniform(h, w, degenerate_result(kind).params);
    let mut t1 = Raster::filled(h, w, INVALID_VALUE);
    let mut r2 = Raster::filled(h, w, INVALID_VALUE);
    let mut invalid = Mask::full(h, w);
    for (i, res) in results.iter().enumerate() {
        let Some(res) = res else { continue };
        params.set(i, &res.params);
        r2.data_mut()[i] = res.r2;
        if res.is_valid() {
            t1.data_mut()[i] = res.corrected_t1.expect("valid fit has T1");
            invalid.set(i % w, i / w, false);
        }
    }
    Ok(FitMaps {
        params,
        t1,
        r2,
        invalid,
    })
}
