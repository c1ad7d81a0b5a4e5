//! Deformation fields: stationary-velocity integration, warping, Jacobian
//! analysis and the exact adjoints needed to optimise velocities by gradient
//! descent.
//!
//! Conventions:
//! * Velocities live on a half-resolution grid of `ceil(H/2) x ceil(W/2)`
//!   nodes; half-grid node `j` sits at full-resolution pixel `2j`.
//! * All components are in full-resolution pixels, `(dx, dy)`.
//! * Resampling pulls: `warp(I, d)(x) = I(x + d(x))`, bilinear, with
//!   coordinates clamped to the border.
//! * Where bilinear interpolation has a kink (integer sample coordinates) the
//!   derivative used is the average of the one-sided slopes, which is what a
//!   central finite difference measures.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Raster;

/// Number of squaring steps used unless configured otherwise.
pub const DEFAULT_STEPS: usize = 7;

/// Half-resolution grid size for a full-resolution `height x width` image.
pub fn half_dims(height: usize, width: usize) -> (usize, usize) {
    (height.div_ceil(2), width.div_ceil(2))
}

/// Stationary velocity field stored at half resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    full_height: usize,
    full_width: usize,
    pub vx: Raster,
    pub vy: Raster,
}

impl VelocityField {
    pub fn zeros(full_height: usize, full_width: usize) -> Self {
        let (h, w) = half_dims(full_height, full_width);
        Self {
            full_height,
            full_width,
            vx: Raster::zeros(h, w),
            vy: Raster::zeros(h, w),
        }
    }

    pub fn new(full_height: usize, full_width: usize, vx: Raster, vy: Raster) -> Result<Self> {
        let (h, w) = half_dims(full_height, full_width);
        if vx.height() != h || vx.width() != w || !vx.same_shape(&vy) {
            return Err(Error::GridMismatch(format!(
                "velocity components must be {h}x{w} for a {full_height}x{full_width} image"
            )));
        }
        if vx.first_non_finite().is_some() || vy.first_non_finite().is_some() {
            return Err(Error::NonFinite {
                what: "velocity field".into(),
                index: 0,
            });
        }
        Ok(Self {
            full_height,
            full_width,
            vx,
            vy,
        })
    }

    pub fn full_dims(&self) -> (usize, usize) {
        (self.full_height, self.full_width)
    }

    pub fn half_dims(&self) -> (usize, usize) {
        (self.vx.height(), self.vx.width())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            full_height: self.full_height,
            full_width: self.full_width,
            vx: self.vx.map(|v| v * c),
            vy: self.vy.map(|v| v * c),
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.vx
            .data()
            .iter()
            .zip(self.vy.data())
            .map(|(x, y)| x.hypot(*y))
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.vx.data().iter().chain(self.vy.data()).all(|&v| v == 0.0)
    }
}

/// Full-resolution displacement field in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub dx: Raster,
    pub dy: Raster,
}

impl DisplacementField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            dx: Raster::zeros(height, width),
            dy: Raster::zeros(height, width),
        }
    }

    pub fn new(dx: Raster, dy: Raster) -> Result<Self> {
        if !dx.same_shape(&dy) {
            return Err(Error::GridMismatch("displacement components differ".into()));
        }
        Ok(Self { dx, dy })
    }

    pub fn height(&self) -> usize {
        self.dx.height()
    }

    pub fn width(&self) -> usize {
        self.dx.width()
    }

    pub fn mean_norm(&self) -> f64 {
        let s: f64 = self
            .dx
            .data()
            .iter()
            .zip(self.dy.data())
            .map(|(x, y)| x.hypot(*y))
            .sum();
        s / self.dx.len() as f64
    }

    pub fn max_norm(&self) -> f64 {
        self.dx
            .data()
            .iter()
            .zip(self.dy.data())
            .map(|(x, y)| x.hypot(*y))
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.dx.data().iter().chain(self.dy.data()).all(|&v| v == 0.0)
    }
}

// ---------------------------------------------------------------------------
// bilinear primitives

/// Corner indices and weights of a clamped bilinear sample.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    idx: [usize; 4],
    w: [f64; 4],
}

#[inline]
fn axis(len: usize, p: f64) -> (usize, usize, f64) {
    if len == 1 {
        return (0, 0, 0.0);
    }
    let pc = p.clamp(0.0, (len - 1) as f64);
    let i0 = (pc.floor() as usize).min(len - 2);
    (i0, i0 + 1, pc - i0 as f64)
}

#[inline]
fn stencil(width: usize, height: usize, px: f64, py: f64) -> Stencil {
    let (x0, x1, fx) = axis(width, px);
    let (y0, y1, fy) = axis(height, py);
    Stencil {
        idx: [
            y0 * width + x0,
            y0 * width + x1,
            y1 * width + x0,
            y1 * width + x1,
        ],
        w: [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
    }
}

#[inline]
fn sample(src: &Raster, px: f64, py: f64) -> f64 {
    let s = stencil(src.width(), src.height(), px, py);
    let d = src.data();
    s.w[0] * d[s.idx[0]] + s.w[1] * d[s.idx[1]] + s.w[2] * d[s.idx[2]] + s.w[3] * d[s.idx[3]]
}

/// Adds `value` times the sampling weights of `(px, py)` into `dst`; the
/// transpose of [`sample`] with respect to the raster values.
#[inline]
fn scatter(dst: &mut Raster, px: f64, py: f64, value: f64) {
    let s = stencil(dst.width(), dst.height(), px, py);
    let d = dst.data_mut();
    for k in 0..4 {
        d[s.idx[k]] += s.w[k] * value;
    }
}

/// Slope of the clamped 1-D linear interpolant along one axis, with the
/// bracketing cell (lo, hi) and the interpolation weight along the other axis
/// handled by the caller.
#[inline]
fn axis_slope(len: usize, p: f64) -> Option<(usize, usize, f64)> {
    if len == 1 || p < 0.0 || p > (len - 1) as f64 {
        return None;
    }
    let fl = p.floor();
    if p == fl {
        // kink: average of the one-sided slopes
        let i = fl as usize;
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(len - 1);
        Some((lo, hi, 0.5))
    } else {
        let i0 = (fl as usize).min(len - 2);
        Some((i0, i0 + 1, 1.0))
    }
}

/// Spatial gradient `(d/dpx, d/dpy)` of the clamped bilinear interpolant.
#[inline]
fn sample_gradient(src: &Raster, px: f64, py: f64) -> (f64, f64) {
    let (w, h) = (src.width(), src.height());
    let d = src.data();
    let (x0, x1, fx) = axis(w, px);
    let (y0, y1, fy) = axis(h, py);
    let gx = match axis_slope(w, px) {
        Some((lo, hi, s)) => {
            s * ((1.0 - fy) * (d[y0 * w + hi] - d[y0 * w + lo])
                + fy * (d[y1 * w + hi] - d[y1 * w + lo]))
        }
        None => 0.0,
    };
    let gy = match axis_slope(h, py) {
        Some((lo, hi, s)) => {
            s * ((1.0 - fx) * (d[hi * w + x0] - d[lo * w + x0])
                + fx * (d[hi * w + x1] - d[lo * w + x1]))
        }
        None => 0.0,
    };
    (gx, gy)
}

// ---------------------------------------------------------------------------
// resampling between grids

/// Bilinear upsampling of a half-resolution raster to `height x width`.
/// Values are not rescaled.
pub fn upsample(half: &Raster, height: usize, width: usize) -> Raster {
    let mut out = Raster::zeros(height, width);
    out.data_mut()
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                *o = sample(half, x as f64 * 0.5, y as f64 * 0.5);
            }
        });
    out
}

/// Transpose of [`upsample`].
pub fn upsample_adjoint(full: &Raster, half_height: usize, half_width: usize) -> Raster {
    let mut out = Raster::zeros(half_height, half_width);
    for y in 0..full.height() {
        for x in 0..full.width() {
            scatter(&mut out, x as f64 * 0.5, y as f64 * 0.5, full.get(x, y));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// composition and integration

/// Displacement of `phi_a ∘ phi_b` where `phi(x) = x + d(x)`:
/// `b(x) + a(x + scale * b(x))`. `scale` converts displacement units into
/// grid units (0.5 on the half-resolution grid).
pub fn compose_scaled(
    a: &DisplacementField,
    b: &DisplacementField,
    scale: f64,
) -> DisplacementField {
    let (h, w) = (b.height(), b.width());
    let mut dx = Raster::zeros(h, w);
    let mut dy = Raster::zeros(h, w);
    dx.data_mut()
        .par_chunks_mut(w)
        .zip(dy.data_mut().par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (rx, ry))| {
            for x in 0..w {
                let bx = b.dx.get(x, y);
                let by = b.dy.get(x, y);
                let px = x as f64 + scale * bx;
                let py = y as f64 + scale * by;
                rx[x] = bx + sample(&a.dx, px, py);
                ry[x] = by + sample(&a.dy, px, py);
            }
        });
    DisplacementField { dx, dy }
}

/// Full-resolution composition `phi_a ∘ phi_b`.
pub fn compose(a: &DisplacementField, b: &DisplacementField) -> DisplacementField {
    compose_scaled(a, b, 1.0)
}

/// Vector-Jacobian product of [`compose_scaled`] w.r.t. both fields.
pub fn vjp_compose(
    a: &DisplacementField,
    b: &DisplacementField,
    scale: f64,
    cot: &DisplacementField,
) -> (DisplacementField, DisplacementField) {
    let (h, w) = (b.height(), b.width());
    let mut ga = DisplacementField::zeros(a.height(), a.width());
    let mut gb = cot.clone();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let px = x as f64 + scale * b.dx.data()[i];
            let py = y as f64 + scale * b.dy.data()[i];
            let cx = cot.dx.data()[i];
            let cy = cot.dy.data()[i];
            scatter(&mut ga.dx, px, py, cx);
            scatter(&mut ga.dy, px, py, cy);
            let (axx, axy) = sample_gradient(&a.dx, px, py);
            let (ayx, ayy) = sample_gradient(&a.dy, px, py);
            gb.dx.data_mut()[i] += scale * (cx * axx + cy * ayx);
            gb.dy.data_mut()[i] += scale * (cx * axy + cy * ayy);
        }
    }
    (ga, gb)
}

/// Half-resolution displacements `d_0 .. d_steps` of the squaring chain.
fn squaring_chain(v: &VelocityField, steps: usize) -> Vec<DisplacementField> {
    let s = 0.5f64.powi(steps as i32);
    let mut chain = Vec::with_capacity(steps + 1);
    chain.push(DisplacementField {
        dx: v.vx.map(|c| c * s),
        dy: v.vy.map(|c| c * s),
    });
    for k in 0..steps {
        let next = compose_scaled(&chain[k], &chain[k], 0.5);
        chain.push(next);
    }
    chain
}

/// Exponential of a stationary velocity field by scaling and squaring:
/// `d_0 = v / 2^steps`, `d_{k+1} = d_k ∘ d_k`, integrated on the
/// half-resolution grid and upsampled to full resolution last.
pub fn integrate_svf(v: &VelocityField, steps: usize) -> DisplacementField {
    let chain = squaring_chain(v, steps);
    let last = chain.last().expect("chain has d_0");
    let (h, w) = v.full_dims();
    DisplacementField {
        dx: upsample(&last.dx, h, w),
        dy: upsample(&last.dy, h, w),
    }
}

/// Vector-Jacobian product of [`integrate_svf`]: pulls a full-resolution
/// cotangent back to the velocity nodes by re-running the squaring chain and
/// traversing it in reverse.
pub fn vjp_integrate(v: &VelocityField, steps: usize, cot: &DisplacementField) -> VelocityField {
    let chain = squaring_chain(v, steps);
    let (hh, hw) = v.half_dims();
    let mut g = DisplacementField {
        dx: upsample_adjoint(&cot.dx, hh, hw),
        dy: upsample_adjoint(&cot.dy, hh, hw),
    };
    for k in (0..steps).rev() {
        let (ga, gb) = vjp_compose(&chain[k], &chain[k], 0.5, &g);
        g = DisplacementField {
            dx: add(&ga.dx, &gb.dx),
            dy: add(&ga.dy, &gb.dy),
        };
    }
    let s = 0.5f64.powi(steps as i32);
    let (fh, fw) = v.full_dims();
    VelocityField {
        full_height: fh,
        full_width: fw,
        vx: g.dx.map(|c| c * s),
        vy: g.dy.map(|c| c * s),
    }
}

fn add(a: &Raster, b: &Raster) -> Raster {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Raster::new(a.height(), a.width(), data).expect("same shape")
}

// ---------------------------------------------------------------------------
// warping

/// `out(x) = img(x + d(x))`, bilinear with border clamping.
pub fn warp_image(img: &Raster, d: &DisplacementField) -> Raster {
    let w = img.width();
    let mut out = Raster::zeros(img.height(), w);
    out.data_mut()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                *o = sample(
                    img,
                    x as f64 + d.dx.get(x, y),
                    y as f64 + d.dy.get(x, y),
                );
            }
        });
    out
}

/// Nearest-neighbour variant of [`warp_image`] for label-like rasters.
pub fn warp_nearest(img: &Raster, d: &DisplacementField) -> Raster {
    let (h, w) = (img.height(), img.width());
    Raster::from_fn(h, w, |x, y| {
        let px = (x as f64 + d.dx.get(x, y)).round().clamp(0.0, (w - 1) as f64) as usize;
        let py = (y as f64 + d.dy.get(x, y)).round().clamp(0.0, (h - 1) as f64) as usize;
        img.get(px, py)
    })
}

/// Gradients of `<cot, warp_image(img, d)>`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpVjp {
    pub image: Raster,
    pub field: DisplacementField,
}

/// Vector-Jacobian product of [`warp_image`] w.r.t. the displacement only.
pub fn vjp_warp_field(img: &Raster, d: &DisplacementField, cot: &Raster) -> DisplacementField {
    let (h, w) = (img.height(), img.width());
    let mut gx = Raster::zeros(h, w);
    let mut gy = Raster::zeros(h, w);
    gx.data_mut()
        .par_chunks_mut(w)
        .zip(gy.data_mut().par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (rx, ry))| {
            for x in 0..w {
                let c = cot.get(x, y);
                if c == 0.0 {
                    continue;
                }
                let (sx, sy) =
                    sample_gradient(img, x as f64 + d.dx.get(x, y), y as f64 + d.dy.get(x, y));
                rx[x] = c * sx;
                ry[x] = c * sy;
            }
        });
    DisplacementField { dx: gx, dy: gy }
}

/// Vector-Jacobian product of [`warp_image`] w.r.t. image and displacement.
pub fn vjp_warp(img: &Raster, d: &DisplacementField, cot: &Raster) -> WarpVjp {
    let mut image = Raster::zeros(img.height(), img.width());
    for y in 0..img.height() {
        for x in 0..img.width() {
            scatter(
                &mut image,
                x as f64 + d.dx.get(x, y),
                y as f64 + d.dy.get(x, y),
                cot.get(x, y),
            );
        }
    }
    WarpVjp {
        image,
        field: vjp_warp_field(img, d, cot),
    }
}

// ---------------------------------------------------------------------------
// regularity

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianStats {
    pub mean_det: f64,
    pub nonpositive_count: usize,
    pub interior_count: usize,
}

impl JacobianStats {
    pub fn fold_fraction(&self) -> f64 {
        self.nonpositive_count as f64 / self.interior_count.max(1) as f64
    }
}

/// Determinant of the Jacobian of `x -> x + d(x)` by central differences at
/// interior pixels.
pub fn jacobian_determinants(d: &DisplacementField) -> Result<Raster> {
    let (h, w) = (d.height(), d.width());
    if h < 3 || w < 3 {
        return Err(Error::InvalidInput(format!(
            "Jacobian needs at least 3x3 pixels, field is {h}x{w}"
        )));
    }
    Ok(Raster::from_fn(h - 2, w - 2, |xi, yi| {
        let (x, y) = (xi + 1, yi + 1);
        let dxx = 0.5 * (d.dx.get(x + 1, y) - d.dx.get(x - 1, y));
        let dxy = 0.5 * (d.dx.get(x, y + 1) - d.dx.get(x, y - 1));
        let dyx = 0.5 * (d.dy.get(x + 1, y) - d.dy.get(x - 1, y));
        let dyy = 0.5 * (d.dy.get(x, y + 1) - d.dy.get(x, y - 1));
        (1.0 + dxx) * (1.0 + dyy) - dxy * dyx
    }))
}

/// Mean Jacobian determinant and fold count over interior pixels.
pub fn jacobian_stats(d: &DisplacementField) -> Result<JacobianStats> {
    let det = jacobian_determinants(d)?;
    Ok(JacobianStats {
        mean_det: det.sum() / det.len() as f64,
        nonpositive_count: det.data().iter().filter(|&&v| v <= 0.0).count(),
        interior_count: det.len(),
    })
}

/// Mean squared forward-difference gradient norm over the velocity grid,
/// summed over both components, with its exact gradient.
pub fn grad_penalty(v: &VelocityField) -> (f64, VelocityField) {
    let (h, w) = v.half_dims();
    let n = (h * w) as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(2);
    for comp in [&v.vx, &v.vy] {
        let mut g = Raster::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let c = comp.get(x, y);
                if x + 1 < w {
                    let diff = comp.get(x + 1, y) - c;
                    total += diff * diff;
                    let i = g.index(x, y);
                    g.data_mut()[i] -= 2.0 * diff / n;
                    g.data_mut()[i + 1] += 2.0 * diff / n;
                }
                if y + 1 < h {
                    let diff = comp.get(x, y + 1) - c;
                    total += diff * diff;
                    let i = g.index(x, y);
                    g.data_mut()[i] -= 2.0 * diff / n;
                    g.data_mut()[i + w] += 2.0 * diff / n;
                }
            }
        }
        grads.push(g);
    }
    let vy = grads.pop().expect("two components");
    let vx = grads.pop().expect("two components");
    let (fh, fw) = v.full_dims();
    (
        total / n,
        VelocityField {
            full_height: fh,
            full_width: fw,
            vx,
            vy,
        },
    )
}
