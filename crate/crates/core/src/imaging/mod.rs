//! Raster containers shared by every stage of the pipeline.
//!
//! All rasters are row-major with the origin at the top-left pixel; `x` is the
//! column index and `y` the row index.

mod io;
mod render;

pub use io::{
    load_case, load_map, load_segmentations, load_series, save_map, save_mask, write_series,
    FrameEntry, SegEntry, SeriesManifest, MANIFEST_FILE,
};
pub use render::{colormap, render_ppm};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Acquisition scheme of a series, which selects the signal model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SequenceKind {
    #[serde(rename = "STONE")]
    Stone,
    #[serde(rename = "MOLLI")]
    Molli,
}

impl SequenceKind {
    /// Number of free parameters of the signal model.
    pub fn param_count(self) -> usize {
        match self {
            SequenceKind::Stone => 2,
            SequenceKind::Molli => 3,
        }
    }

    /// Fewest samples a per-pixel fit accepts.
    pub fn min_samples(self) -> usize {
        match self {
            SequenceKind::Stone => 3,
            SequenceKind::Molli => 4,
        }
    }
}

impl std::fmt::Display for SequenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SequenceKind::Stone => f.write_str("STONE"),
            SequenceKind::Molli => f.write_str("MOLLI"),
        }
    }
}

/// Image geometry: size in pixels and in-plane spacing in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub height: usize,
    pub width: usize,
    pub spacing_x: f64,
    pub spacing_y: f64,
}

impl Grid2D {
    pub const MIN_SIDE: usize = 8;

    pub fn new(height: usize, width: usize, spacing_x: f64, spacing_y: f64) -> Result<Self> {
        if height < Self::MIN_SIDE || width < Self::MIN_SIDE {
            return Err(Error::InvalidInput(format!(
                "grid {height}x{width} is smaller than {m}x{m}",
                m = Self::MIN_SIDE
            )));
        }
        if !(spacing_x > 0.0 && spacing_y > 0.0 && spacing_x.is_finite() && spacing_y.is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "pixel spacing ({spacing_x}, {spacing_y}) must be positive"
            )));
        }
        Ok(Self {
            height,
            width,
            spacing_x,
            spacing_y,
        })
    }

    /// Unit-spacing grid.
    pub fn unit(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, 1.0, 1.0)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matches(&self, r: &Raster) -> bool {
        r.height() == self.height && r.width() == self.width
    }
}

/// Dense row-major raster of real values.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "raster {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        Raster {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `(min, max)` over all values.
    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Raster) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }
}

/// Binary mask on a raster grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Reads a stored {0.0, 1.0} raster; any other value is rejected.
    pub fn from_binary_raster(r: &Raster) -> Result<Self> {
        let mut data = Vec::with_capacity(r.len());
        for (i, &v) in r.data().iter().enumerate() {
            if v == 1.0 {
                data.push(true);
            } else if v == 0.0 {
                data.push(false);
            } else {
                return Err(Error::InvalidInput(format!(
                    "mask value {v} at index {i} is not 0 or 1"
                )));
            }
        }
        Self::new(r.height(), r.width(), data)
    }

    /// Pixels strictly above `level`.
    pub fn threshold(r: &Raster, level: f64) -> Self {
        Self {
            height: r.height(),
            width: r.width(),
            data: r.data().iter().map(|&v| v > level).collect(),
        }
    }

    pub fn to_raster(&self) -> Raster {
        Raster {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn union(&self, other: &Mask) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a || b)
                .collect(),
        }
    }

    pub fn intersection(&self, other: &Mask) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }
}

/// One acquired magnitude image and its time after preparation.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub values: Raster,
    pub t_ms: f64,
}

/// A single-slice inversion-recovery series.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    kind: SequenceKind,
    grid: Grid2D,
    frames: Vec<Frame>,
    slice_id: String,
}

impl Series {
    pub const MIN_FRAMES: usize = 4;

    pub fn new(
        kind: SequenceKind,
        grid: Grid2D,
        frames: Vec<Frame>,
        slice_id: impl Into<String>,
    ) -> Result<Self> {
        if frames.len() < Self::MIN_FRAMES {
            return Err(Error::TooFewFrames(frames.len()));
        }
        for (i, f) in frames.iter().enumerate() {
            if !grid.matches(&f.values) {
                return Err(Error::GridMismatch(format!(
                    "frame {i} is {}x{}, series grid is {}x{}",
                    f.values.height(),
                    f.values.width(),
                    grid.height,
                    grid.width
                )));
            }
            if !(f.t_ms.is_finite() && f.t_ms >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "frame {i} has invalid time {}",
                    f.t_ms
                )));
            }
            if let Some(index) = f.values.first_non_finite() {
                return Err(Error::NonFinite {
                    what: format!("frame {i}"),
                    index,
                });
            }
            if let Some(index) = f.values.data().iter().position(|&v| v < 0.0) {
                return Err(Error::NegativeValue {
                    what: format!("frame {i}"),
                    index,
                    value: f.values.data()[index],
                });
            }
        }
        Ok(Self {
            kind,
            grid,
            frames,
            slice_id: slice_id.into(),
        })
    }

    pub fn kind(&self) -> SequenceKind {
        self.kind
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn slice_id(&self) -> &str {
        &self.slice_id
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t_ms).collect()
    }

    /// Copy of this series with replaced frame rasters; times are kept.
    pub fn with_values(&self, values: Vec<Raster>) -> Result<Self> {
        if values.len() != self.frames.len() {
            return Err(Error::InvalidInput(format!(
                "{} rasters for {} frames",
                values.len(),
                self.frames.len()
            )));
        }
        let frames = self
            .frames
            .iter()
            .zip(values)
            .map(|(f, values)| Frame {
                values,
                t_ms: f.t_ms,
            })
            .collect();
        Self::new(self.kind, self.grid, frames, self.slice_id.clone())
    }

    /// Per-pixel time courses of one pixel, in frame order.
    pub fn samples_at(&self, pixel: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.values.data()[pixel]).collect()
    }
}

/// Maps every value to `(v - min) / (max - min)` using the extrema of the
/// whole series, so intensity relations between frames are preserved.
pub fn normalize_minmax(series: &Series) -> Result<Series> {
    let (lo, hi) = series
        .frames
        .iter()
        .map(|f| f.values.min_max())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (lo, hi)| {
            (a.min(lo), b.max(hi))
        });
    if !(hi > lo) {
        return Err(Error::Degenerate(format!(
            "constant series (min = max = {lo}) cannot be normalized"
        )));
    }
    let span = hi - lo;
    let values = series
        .frames
        .iter()
        .map(|f| f.values.map(|v| ((v - lo) / span).clamp(0.0, 1.0)))
        .collect();
    series.with_values(values)
}
