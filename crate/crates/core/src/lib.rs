//! Joint motion correction and inversion-recovery T1 mapping.
//!
//! The crate fits per-pixel recovery models to magnitude image series
//! ([`curvefit`]), represents per-frame deformations as stationary velocity
//! fields ([`field`]), and optimizes both jointly against a confidence-gated
//! objective ([`mocor`]). Synthetic phantoms ([`phantom`]) supply ground truth
//! and [`metrics`] scores the results.

pub mod confidence;
pub mod curvefit;
pub mod error;
pub mod field;
pub mod imaging;
pub mod metrics;
pub mod mocor;
pub mod phantom;
pub mod signal;

pub use error::{Error, Result};
