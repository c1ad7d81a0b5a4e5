//! Joint motion correction and parameter mapping.
//!
//! Minimizes `λ1·L_fit + λ2·L_smooth + λ3·L_seg` over one stationary velocity
//! field per frame and the per-pixel signal parameters. Parameters are updated
//! by exact per-pixel refits (block-coordinate descent); velocities by Adam
//! steps on the analytic gradient. The reference frame's field stays zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{self, ConfidenceSelection, SegFrame};
use crate::curvefit::{self, FitMaps};
use crate::error::{Error, Result};
use crate::field::{self, DisplacementField, JacobianStats, VelocityField};
use crate::imaging::{Mask, Raster, Series};
use crate::signal::ParamMap;

/// Smoothing constant of the soft Dice loss.
pub const DICE_EPS: f64 = 1e-6;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MocorConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Initial Adam step size, in velocity pixels.
    pub lr: f64,
    /// Step size reached at the last iteration by cosine decay from `lr`;
    /// equal to `lr` for a constant step.
    pub lr_final: f64,
    pub iters: usize,
    pub steps: usize,
    pub refit_every: usize,
    pub seed: u64,
}

impl Default for MocorConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 5000.0,
            lambda3: 80000.0,
            alpha: 0.9,
            gamma: 0.99,
            lr: 0.05,
            lr_final: 0.002,
            iters: 300,
            steps: field::DEFAULT_STEPS,
            refit_every: 10,
            seed: 0,
        }
    }
}

impl MocorConfig {
    /// Step size at iteration `it` of `iters`.
    pub fn step_size(&self, it: usize) -> f64 {
        if self.iters <= 1 {
            return self.lr;
        }
        let progress = it as f64 / (self.iters - 1) as f64;
        self.lr_final
            + 0.5 * (self.lr - self.lr_final) * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(msg.into()));
        if [self.lambda1, self.lambda2, self.lambda3]
            .iter()
            .any(|l| !(*l >= 0.0 && l.is_finite()))
        {
            return bad("loss weights must be finite and non-negative");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_final > 0.0 && self.lr_final <= self.lr) {
            return bad("lr_final must be positive and at most lr");
        }
        if self.iters == 0 {
            return bad("iters must be at least 1");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.refit_every == 0 {
            return bad("refit_every must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("alpha must lie in (0, 1) and gamma in (0, 1]");
        }
        Ok(())
    }
}

/// Loss components at one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub fit: f64,
    pub smooth: f64,
    pub seg: f64,
    pub total: f64,
}

/// Loss value with its gradient for every frame's velocity nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub fit: f64,
    pub smooth: f64,
    pub seg: f64,
    pub total: f64,
    pub grads: Vec<VelocityField>,
}

impl LossEval {
    fn record(&self, iteration: usize) -> LossRecord {
        LossRecord {
            iteration,
            fit: self.fit,
            smooth: self.smooth,
            seg: self.seg,
            total: self.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    /// Frames resampled into the reference geometry.
    pub corrected_frames: Vec<Raster>,
    pub fields: Vec<DisplacementField>,
    pub velocities: Vec<VelocityField>,
    /// Final parameter, T1 and R² maps over the whole grid.
    pub maps: FitMaps,
    pub reference: usize,
    pub selection: ConfidenceSelection,
    /// One record per iteration before its update, then one for the final
    /// state after the last refit.
    pub loss_trace: Vec<LossRecord>,
    pub jacobians: Vec<JacobianStats>,
}

/// Sum over frames and over pixels in `k` of `(synth - registered)^2`.
pub fn loss_fit(synths: &[Raster], registered: &[Raster], k: &Mask) -> f64 {
    synths
        .iter()
        .zip(registered)
        .map(|(s, r)| {
            s.data()
                .iter()
                .zip(r.data())
                .zip(k.data())
                .filter(|(_, &m)| m)
                .map(|((a, b), _)| (a - b).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Sum of the per-field gradient penalties.
pub fn loss_smooth(velocities: &[VelocityField]) -> f64 {
    velocities.iter().map(|v| field::grad_penalty(v).0).sum()
}

/// `1 - (2Σab + ε) / (Σa² + Σb² + ε)` and its gradient with respect to `b`.
pub fn soft_dice_loss(a: &Raster, b: &Raster) -> (f64, Raster) {
    let sab = a.dot(b);
    let saa = a.dot(a);
    let sbb = b.dot(b);
    let num = 2.0 * sab + DICE_EPS;
    let den = saa + sbb + DICE_EPS;
    let grad = Raster::from_fn(a.height(), a.width(), |x, y| {
        -(2.0 * a.get(x, y) * den - num * 2.0 * b.get(x, y)) / (den * den)
    });
    (1.0 - num / den, grad)
}

/// Segmentation loss over gated frames other than the reference: soft Dice
/// of the warped myocardium and blood-pool masks against the reference's.
pub fn loss_seg(
    selection: &ConfidenceSelection,
    segs: &[SegFrame],
    fields: &[DisplacementField],
) -> f64 {
    if !selection.segmentation_active() {
        return 0.0;
    }
    let r = selection.reference;
    selection
        .members
        .iter()
        .filter(|&&i| i != r)
        .map(|&i| {
            let myo = field::warp_image(&segs[i].myo.to_raster(), &fields[i]);
            let lv = field::warp_image(&segs[i].lv.to_raster(), &fields[i]);
            soft_dice_loss(&segs[r].myo.to_raster(), &myo).0
                + soft_dice_loss(&segs[r].lv.to_raster(), &lv).0
        })
        .sum()
}

/// Everything about a case that stays fixed during optimization.
#[derive(Debug, Clone)]
pub struct MocorProblem {
    times: Vec<f64>,
    frames: Vec<Raster>,
    selection: ConfidenceSelection,
    k_pixels: Vec<usize>,
    myo: Vec<Raster>,
    lv: Vec<Raster>,
    height: usize,
    width: usize,
}

impl MocorProblem {
    pub fn new(series: &Series, segs: &[SegFrame], selection: ConfidenceSelection) -> Result<Self> {
        let grid = series.grid();
        if segs.len() != series.len() {
            return Err(Error::InvalidInput(format!(
                "{} segmentations for {} frames",
                segs.len(),
                series.len()
            )));
        }
        if segs
            .iter()
            .any(|s| s.myo.height() != grid.height || s.myo.width() != grid.width)
        {
            return Err(Error::GridMismatch("segmentations do not match the series".into()));
        }
        if selection.reference >= series.len() {
            return Err(Error::InvalidInput("reference frame out of range".into()));
        }
        let k = selection.mask();
        let k_pixels = (0..k.len()).filter(|&i| k.data()[i]).collect();
        Ok(Self {
            times: series.times(),
            frames: series.frames().iter().map(|f| f.values.clone()).collect(),
            k_pixels,
            myo: segs.iter().map(|s| s.myo.to_raster()).collect(),
            lv: segs.iter().map(|s| s.lv.to_raster()).collect(),
            selection,
            height: grid.height,
            width: grid.width,
        })
    }

    pub fn selection(&self) -> &ConfidenceSelection {
        &self.selection
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Model magnitudes at the pixels of `K` for frame `i`.
    fn synth_on_k(&self, params: &ParamMap, i: usize) -> Vec<f64> {
        let t = self.times[i];
        self.k_pixels
            .iter()
            .map(|&p| params.at(p).signal(t).abs())
            .collect()
    }

    fn seg_frame(&self, i: usize) -> bool {
        let sel = &self.selection;
        sel.segmentation_active() && i != sel.reference && sel.members.contains(&i)
    }
}

struct FrameEval {
    fit: f64,
    smooth: f64,
    seg: f64,
    grad: Option<VelocityField>,
}

fn eval_frame(
    problem: &MocorProblem,
    i: usize,
    v: &VelocityField,
    params: &ParamMap,
    config: &MocorConfig,
    with_grad: bool,
) -> FrameEval {
    let (h, w) = (problem.height, problem.width);
    let d = field::integrate_svf(v, config.steps);
    let registered = field::warp_image(&problem.frames[i], &d);
    let synth = problem.synth_on_k(params, i);

    let mut fit = 0.0;
    let mut fit_cot = Raster::zeros(h, w);
    for (&p, s) in problem.k_pixels.iter().zip(&synth) {
        let diff = s - registered.data()[p];
        fit += diff * diff;
        fit_cot.data_mut()[p] = -2.0 * config.lambda1 * diff;
    }

    let mut seg = 0.0;
    let mut seg_grads = Vec::new();
    if problem.seg_frame(i) && config.lambda3 != 0.0 {
        let r = problem.selection.reference;
        for (moving, target) in [
            (&problem.myo[i], &problem.myo[r]),
            (&problem.lv[i], &problem.lv[r]),
        ] {
            let warped = field::warp_image(moving, &d);
            let (l, g) = soft_dice_loss(target, &warped);
            seg += l;
            if with_grad {
                let g = g.map(|c| c * config.lambda3);
                seg_grads.push(field::vjp_warp_field(moving, &d, &g));
            }
        }
    }

    let (smooth, smooth_grad) = field::grad_penalty(v);
    let grad = with_grad.then(|| {
        let mut gd = field::vjp_warp_field(&problem.frames[i], &d, &fit_cot);
        for sg in &seg_grads {
            for (a, b) in gd.dx.data_mut().iter_mut().zip(sg.dx.data()) {
                *a += b;
            }
            for (a, b) in gd.dy.data_mut().iter_mut().zip(sg.dy.data()) {
                *a += b;
            }
        }
        let mut gv = field::vjp_integrate(v, config.steps, &gd);
        for (a, b) in gv.vx.data_mut().iter_mut().zip(smooth_grad.vx.data()) {
            *a += config.lambda2 * b;
        }
        for (a, b) in gv.vy.data_mut().iter_mut().zip(smooth_grad.vy.data()) {
            *a += config.lambda2 * b;
        }
        gv
    });
    FrameEval {
        fit,
        smooth,
        seg,
        grad,
    }
}

fn evaluate(
    problem: &MocorProblem,
    velocities: &[VelocityField],
    params: &ParamMap,
    config: &MocorConfig,
    with_grad: bool,
) -> Result<LossEval> {
    if velocities.len() != problem.len() {
        return Err(Error::InvalidInput(format!(
            "{} velocity fields for {} frames",
            velocities.len(),
            problem.len()
        )));
    }
    if params.height() != problem.height || params.width() != problem.width {
        return Err(Error::GridMismatch("parameter maps do not match the series".into()));
    }
    // Collected in frame order and summed sequentially, so the result does
    // not depend on scheduling.
    let per_frame: Vec<FrameEval> = (0..problem.len())
        .into_par_iter()
        .map(|i| eval_frame(problem, i, &velocities[i], params, config, with_grad))
        .collect();
    let mut fit = 0.0;
    let mut smooth = 0.0;
    let mut seg = 0.0;
    let mut grads = Vec::new();
    for f in per_frame {
        fit += f.fit;
        smooth += f.smooth;
        seg += f.seg;
        if let Some(g) = f.grad {
            grads.push(g);
        }
    }
    let total = config.lambda1 * fit + config.lambda2 * smooth + config.lambda3 * seg;
    Ok(LossEval {
        fit,
        smooth,
        seg,
        total,
        grads,
    })
}

/// Total loss at `(velocities, params)` with its gradient w.r.t. every
/// velocity node.
pub fn total_loss(
    problem: &MocorProblem,
    velocities: &[VelocityField],
    params: &ParamMap,
    config: &MocorConfig,
) -> Result<LossEval> {
    evaluate(problem, velocities, params, config, true)
}

/// Total loss without gradients.
pub fn loss_value(
    problem: &MocorProblem,
    velocities: &[VelocityField],
    params: &ParamMap,
    config: &MocorConfig,
) -> Result<LossEval> {
    evaluate(problem, velocities, params, config, false)
}

fn check_finite(e: &LossEval, iteration: usize) -> Result<()> {
    let grads_finite = e
        .grads
        .iter()
        .all(|g| g.vx.first_non_finite().is_none() && g.vy.first_non_finite().is_none());
    if e.total.is_finite() && grads_finite {
        return Ok(());
    }
    log::error!(
        "non-finite loss at iteration {iteration}: fit={} smooth={} seg={} total={}",
        e.fit,
        e.smooth,
        e.seg,
        e.total
    );
    Err(Error::NonFiniteLoss {
        iteration,
        fit: e.fit,
        smooth: e.smooth,
        seg: e.seg,
    })
}

/// Adam moments for one velocity field.
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, t: i32) {
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for j in 0..params.len() {
            let g = grad[j];
            self.m[j] = ADAM_BETA1 * self.m[j] + (1.0 - ADAM_BETA1) * g;
            self.v[j] = ADAM_BETA2 * self.v[j] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = self.m[j] / c1;
            let vhat = self.v[j] / c2;
            params[j] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

fn registered_series(series: &Series, fields: &[DisplacementField]) -> Result<Series> {
    let values = series
        .frames()
        .iter()
        .zip(fields)
        .map(|(f, d)| field::warp_image(&f.values, d))
        .collect();
    series.with_values(values)
}

fn integrate_all(velocities: &[VelocityField], steps: usize) -> Vec<DisplacementField> {
    velocities
        .par_iter()
        .map(|v| field::integrate_svf(v, steps))
        .collect()
}

/// Runs the joint optimization on a (normalized) series.
pub fn run_mbss_t1(series: &Series, segs: &[SegFrame], config: &MocorConfig) -> Result<CaseResult> {
    config.validate()?;
    let selection = confidence::select(segs, config.alpha, config.gamma)?;
    let r = selection.reference;
    log::info!(
        "slice {}: {} of {} frames gated, reference {r}",
        series.slice_id(),
        selection.members.len(),
        series.len()
    );
    let k = selection.mask().clone();
    let problem = MocorProblem::new(series, segs, selection)?;
    let grid = series.grid();
    let (h, w) = (grid.height, grid.width);

    let mut velocities = vec![VelocityField::zeros(h, w); series.len()];
    let mut params = curvefit::fit_map(series, Some(&k))?.params;
    let mut moments: Vec<(Moments, Moments)> = velocities
        .iter()
        .map(|v| (Moments::new(v.vx.len()), Moments::new(v.vy.len())))
        .collect();
    let mut trace = Vec::with_capacity(config.iters + 1);

    for it in 0..config.iters {
        if it > 0 && it % config.refit_every == 0 {
            let fields = integrate_all(&velocities, config.steps);
            params = curvefit::fit_map(&registered_series(series, &fields)?, Some(&k))?.params;
        }
        let eval = total_loss(&problem, &velocities, &params, config)?;
        check_finite(&eval, it)?;
        log::debug!(
            "iter {it}: total {:.6e} fit {:.6e} smooth {:.6e} seg {:.6e}",
            eval.total,
            eval.fit,
            eval.smooth,
            eval.seg
        );
        trace.push(eval.record(it));
        let t = (it + 1) as i32;
        let lr = config.step_size(it);
        for (i, (v, g)) in velocities.iter_mut().zip(&eval.grads).enumerate() {
            if i == r {
                continue;
            }
            let (mx, my) = &mut moments[i];
            mx.step(v.vx.data_mut(), g.vx.data(), lr, t);
            my.step(v.vy.data_mut(), g.vy.data(), lr, t);
        }
    }

    let fields = integrate_all(&velocities, config.steps);
    let corrected = registered_series(series, &fields)?;
    let maps = curvefit::fit_map(&corrected, None)?;
    let last = loss_value(&problem, &velocities, &maps.params, config)?;
    check_finite(&last, config.iters)?;
    trace.push(last.record(config.iters));

    let jacobians = fields
        .iter()
        .map(field::jacobian_stats)
        .collect::<Result<Vec<_>>>()?;
    let first = trace[0].total;
    log::info!(
        "slice {}: loss {first:.6e} -> {:.6e}",
        series.slice_id(),
        last.total
    );
    Ok(CaseResult {
        corrected_frames: corrected.frames().iter().map(|f| f.values.clone()).collect(),
        fields,
        velocities,
        maps,
        reference: r,
        selection: problem.selection,
        loss_trace: trace,
        jacobians,
    })
}
