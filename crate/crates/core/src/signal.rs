//! Inversion-recovery signal models and the Look-Locker correction.
//!
//! Both models return the *signed* longitudinal signal. Acquired frames are
//! magnitude images, so comparisons against data use `|f(t)|`; the curve
//! fitter restores polarity before fitting the signed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Frame, Raster, SequenceKind};

/// Shortest and longest admissible recovery time constant, in ms.
pub const T1_BOUNDS_MS: (f64, f64) = (1.0, 5000.0);

/// Amplitude upper bound as a multiple of the largest observed sample.
pub const AMPLITUDE_BOUND_FACTOR: f64 = 10.0;

/// Three-parameter Look-Locker model `A - B exp(-t / T1*)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MolliParams {
    pub a: f64,
    pub b: f64,
    pub t1_star: f64,
}

/// Two-parameter ideal-inversion model `M0 (1 - 2 exp(-t / T1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoneParams {
    pub m0: f64,
    pub t1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RecoveryParams {
    Molli(MolliParams),
    Stone(StoneParams),
}

/// Raised when `B / A <= 1`, which would make the corrected T1 non-positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonPhysical {
    pub ratio: f64,
}

impl std::fmt::Display for NonPhysical {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "non-physical Look-Locker fit: B/A = {}", self.ratio)
    }
}

impl std::error::Error for NonPhysical {}

#[inline]
pub fn molli_signal(p: &MolliParams, t: f64) -> f64 {
    p.a - p.b * (-t / p.t1_star).exp()
}

/// Partial derivatives of [`molli_signal`] w.r.t. `(A, B, T1*)`.
#[inline]
pub fn molli_gradient(p: &MolliParams, t: f64) -> [f64; 3] {
    let e = (-t / p.t1_star).exp();
    [1.0, -e, -p.b * e * t / (p.t1_star * p.t1_star)]
}

/// Look-Locker correction `T1 = T1* (B/A - 1)`.
pub fn molli_correct(p: &MolliParams) -> std::result::Result<f64, NonPhysical> {
    let ratio = p.b / p.a;
    if !(ratio > 1.0) || !ratio.is_finite() {
        return Err(NonPhysical { ratio });
    }
    Ok(p.t1_star * (ratio - 1.0))
}

#[inline]
pub fn stone_signal(p: &StoneParams, t: f64) -> f64 {
    p.m0 * (1.0 - 2.0 * (-t / p.t1).exp())
}

/// Partial derivatives of [`stone_signal`] w.r.t. `(M0, T1)`.
#[inline]
pub fn stone_gradient(p: &StoneParams, t: f64) -> [f64; 2] {
    let e = (-t / p.t1).exp();
    [1.0 - 2.0 * e, -2.0 * p.m0 * e * t / (p.t1 * p.t1)]
}

impl StoneParams {
    /// The equivalent Look-Locker parameterisation (`A = M0`, `B = 2 M0`).
    pub fn as_molli(&self) -> MolliParams {
        MolliParams {
            a: self.m0,
            b: 2.0 * self.m0,
            t1_star: self.t1,
        }
    }
}

impl RecoveryParams {
    pub fn kind(&self) -> SequenceKind {
        match self {
            RecoveryParams::Molli(_) => SequenceKind::Molli,
            RecoveryParams::Stone(_) => SequenceKind::Stone,
        }
    }

    #[inline]
    pub fn signal(&self, t: f64) -> f64 {
        match self {
            RecoveryParams::Molli(p) => molli_signal(p, t),
            RecoveryParams::Stone(p) => stone_signal(p, t),
        }
    }

    /// Tissue T1: Look-Locker corrected for MOLLI, the fitted T1 for STONE.
    pub fn corrected_t1(&self) -> std::result::Result<f64, NonPhysical> {
        match self {
            RecoveryParams::Molli(p) => molli_correct(p),
            RecoveryParams::Stone(p) => Ok(p.t1),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            RecoveryParams::Molli(p) => vec![p.a, p.b, p.t1_star],
            RecoveryParams::Stone(p) => vec![p.m0, p.t1],
        }
    }

    pub fn from_slice(kind: SequenceKind, v: &[f64]) -> Self {
        match kind {
            SequenceKind::Molli => RecoveryParams::Molli(MolliParams {
                a: v[0],
                b: v[1],
                t1_star: v[2],
            }),
            SequenceKind::Stone => RecoveryParams::Stone(StoneParams { m0: v[0], t1: v[1] }),
        }
    }
}

/// Channel names of a parameter map, in storage order.
pub fn channel_names(kind: SequenceKind) -> &'static [&'static str] {
    match kind {
        SequenceKind::Molli => &["a", "b", "t1_star"],
        SequenceKind::Stone => &["m0", "t1"],
    }
}

/// Per-pixel signal-model parameters, one raster per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMap {
    kind: SequenceKind,
    channels: Vec<Raster>,
}

impl ParamMap {
    pub fn new(kind: SequenceKind, channels: Vec<Raster>) -> Result<Self> {
        if channels.len() != kind.param_count() {
            return Err(Error::InvalidInput(format!(
                "{kind} map needs {} channels, got {}",
                kind.param_count(),
                channels.len()
            )));
        }
        if channels.iter().any(|c| !c.same_shape(&channels[0])) {
            return Err(Error::GridMismatch("parameter channels differ in shape".into()));
        }
        Ok(Self { kind, channels })
    }

    pub fn uniform(height: usize, width: usize, p: RecoveryParams) -> Self {
        let channels = p
            .to_vec()
            .into_iter()
            .map(|v| Raster::filled(height, width, v))
            .collect();
        Self {
            kind: p.kind(),
            channels,
        }
    }

    pub fn from_fn(
        kind: SequenceKind,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> RecoveryParams,
    ) -> Self {
        let mut channels = vec![Raster::zeros(height, width); kind.param_count()];
        for y in 0..height {
            for x in 0..width {
                for (c, v) in f(x, y).to_vec().into_iter().enumerate() {
                    channels[c].set(x, y, v);
                }
            }
        }
        Self { kind, channels }
    }

    pub fn kind(&self) -> SequenceKind {
        self.kind
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn channels(&self) -> &[Raster] {
        &self.channels
    }

    pub fn at(&self, pixel: usize) -> RecoveryParams {
        let v: Vec<f64> = self.channels.iter().map(|c| c.data()[pixel]).collect();
        RecoveryParams::from_slice(self.kind, &v)
    }

    pub fn set(&mut self, pixel: usize, p: &RecoveryParams) {
        for (c, v) in self.channels.iter_mut().zip(p.to_vec()) {
            c.data_mut()[pixel] = v;
        }
    }
}

/// Evaluates the model at every pixel for time `t`. With `magnitude` set the
/// absolute value is returned, matching magnitude-reconstructed frames.
pub fn synth_frame(params: &ParamMap, t: f64, magnitude: bool) -> Frame {
    let (h, w) = (params.height(), params.width());
    let data = (0..h * w)
        .map(|i| {
            let s = params.at(i).signal(t);
            if magnitude {
                s.abs()
            } else {
                s
            }
        })
        .collect();
    Frame {
        values: Raster::new(h, w, data).expect("shape from param map"),
        t_ms: t,
    }
}
