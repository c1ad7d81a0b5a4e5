use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{path}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{what}: non-finite value at index {index}")]
    NonFinite { what: String, index: usize },

    #[error("{what}: negative magnitude {value} at index {index}")]
    NegativeValue {
        what: String,
        index: usize,
        value: f64,
    },

    #[error("series has {0} frames, at least 4 are required")]
    TooFewFrames(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("non-finite loss at iteration {iteration}: fit={fit} smooth={smooth} seg={seg}")]
    NonFiniteLoss {
        iteration: usize,
        fit: f64,
        smooth: f64,
        seg: f64,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem, file formats or arguments
    /// rather than by the numerics.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Manifest { .. }
                | Error::Csv(_)
                | Error::SizeMismatch { .. }
                | Error::TooFewFrames(_)
                | Error::GridMismatch(_)
                | Error::InvalidInput(_)
                | Error::NegativeValue { .. }
                | Error::NonFinite { .. }
        )
    }
}
