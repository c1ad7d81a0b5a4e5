//! Motion-correction configuration from a JSON file plus flag overrides.
//!
//! Flags carry exactly the JSON key names, and a flag always wins over the
//! file.

use std::fs;
use std::path::Path;

use anyhow::Context;
use clap::Args;
use t1map_core::mocor::MocorConfig;

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Default, Args)]
pub struct MocorOverrides {
    /// Weight of the intensity term.
    #[arg(long = "lambda1")]
    pub lambda1: Option<f64>,
    /// Weight of velocity smoothness.
    #[arg(long = "lambda2")]
    pub lambda2: Option<f64>,
    /// Weight of the segmentation term.
    #[arg(long = "lambda3")]
    pub lambda3: Option<f64>,
    /// Per-pixel confidence threshold.
    #[arg(long = "alpha")]
    pub alpha: Option<f64>,
    /// Fraction of myocardium that must pass alpha.
    #[arg(long = "gamma")]
    pub gamma: Option<f64>,
    /// Initial Adam step.
    #[arg(long = "lr")]
    pub lr: Option<f64>,
    /// Final Adam step (cosine decay).
    #[arg(long = "lr_final")]
    pub lr_final: Option<f64>,
    /// Optimizer iterations.
    #[arg(long = "iters")]
    pub iters: Option<usize>,
    /// Scaling-and-squaring steps.
    #[arg(long = "steps")]
    pub steps: Option<usize>,
    /// Iterations between parameter refits.
    #[arg(long = "refit_every")]
    pub refit_every: Option<usize>,
    /// Seed recorded in run.json.
    #[arg(long = "seed")]
    pub seed: Option<u64>,
}

impl MocorOverrides {
    pub fn apply(&self, config: &mut MocorConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { config.$field = v; })*
            };
        }
        set!(lambda1, lambda2, lambda3, alpha, gamma, lr, lr_final, iters, steps, refit_every, seed);
    }
}

/// Reads the optional config file, applies the flags and validates.
pub fn resolve(file: Option<&Path>, overrides: &MocorOverrides) -> CliResult<MocorConfig> {
    let mut config = match file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(CliError::usage)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))
                .map_err(CliError::usage)?
        }
        None => MocorConfig::default(),
    };
    overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}
