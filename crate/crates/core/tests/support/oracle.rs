//! Brute-force least-squares estimator for the recovery models.
//!
//! The amplitudes are eliminated by linear least squares for each candidate
//! time constant (variable projection); a dense log grid is scanned and the
//! best cell refined by golden-section search. Shares no code with the
//! Levenberg-Marquardt fitter.

const GRID_POINTS: usize = 4000;
const T1_RANGE: (f64, f64) = (1.0, 5000.0);

/// Best STONE residual for a fixed T1: the magnitude model is linear in M0.
pub fn stone_profile(samples: &[f64], times: &[f64], t1: f64) -> (f64, f64) {
    let g: Vec<f64> = times.iter().map(|&t| (1.0 - 2.0 * (-t / t1).exp()).abs()).collect();
    let gg: f64 = g.iter().map(|v| v * v).sum();
    let m0 = g.iter().zip(samples).map(|(a, b)| a * b).sum::<f64>() / gg;
    let res = g.iter().zip(samples).map(|(a, s)| (m0 * a - s).powi(2)).sum();
    (res, m0)
}

/// Best MOLLI residual for a fixed T1*. The signed curve is increasing in
/// time, so the sign pattern is "negative up to some time, then positive";
/// each split gives a 2x2 linear least-squares problem in (A, B).
pub fn molli_profile(samples: &[f64], times: &[f64], t1_star: f64) -> (f64, f64, f64) {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&i, &j| times[i].total_cmp(&times[j]));
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for split in 0..=times.len() {
        let mut signed = samples.to_vec();
        for &i in &order[..split] {
            signed[i] = -signed[i];
        }
        let e: Vec<f64> = times.iter().map(|&t| (-t / t1_star).exp()).collect();
        let n = times.len() as f64;
        let (se, see) = (e.iter().sum::<f64>(), e.iter().map(|v| v * v).sum::<f64>());
        let sy: f64 = signed.iter().sum();
        let sey: f64 = e.iter().zip(&signed).map(|(a, b)| a * b).sum();
        // Normal equations for y = A - B e.
        let det = n * see - se * se;
        if det.abs() < 1e-300 {
            continue;
        }
        let a = (see * sy - se * sey) / det;
        let b = (se * sy - n * sey) / det;
        let res = e
            .iter()
            .zip(samples)
            .map(|(ei, s)| ((a - b * ei).abs() - s).powi(2))
            .sum::<f64>();
        if res < best.0 {
            best = (res, a, b);
        }
    }
    best
}

/// Grid scan over log(T1) followed by golden-section refinement.
pub fn oracle_argmin(profile: impl Fn(f64) -> f64) -> f64 {
    let (lo, hi) = (T1_RANGE.0.ln(), T1_RANGE.1.ln());
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let best = (0..GRID_POINTS)
        .min_by(|&i, &j| {
            profile((lo + i as f64 * step).exp()).total_cmp(&profile((lo + j as f64 * step).exp()))
        })
        .unwrap();
    let (mut a, mut b) = (
        lo + best.saturating_sub(1) as f64 * step,
        lo + (best + 1).min(GRID_POINTS - 1) as f64 * step,
    );
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if profile(c.exp()) < profile(d.exp()) {
            b = d;
        } else {
            a = c;
        }
    }
    ((a + b) / 2.0).exp()
}

/// `(M0, T1)` minimizing the STONE magnitude residual.
pub fn stone_oracle(samples: &[f64], times: &[f64]) -> (f64, f64) {
    let t1 = oracle_argmin(|t1| stone_profile(samples, times, t1).0);
    (stone_profile(samples, times, t1).1, t1)
}

/// `(A, B, T1*)` minimizing the MOLLI magnitude residual.
pub fn molli_oracle(samples: &[f64], times: &[f64]) -> (f64, f64, f64) {
    let t1_star = oracle_argmin(|ts| molli_profile(samples, times, ts).0);
    let (_, a, b) = molli_profile(samples, times, t1_star);
    (a, b, t1_star)
}
