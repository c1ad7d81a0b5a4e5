//! Command-line pipelines over the `t1map-core` toolkit.
//!
//! Each subcommand is a thin layer that loads inputs, calls the library and
//! writes results in the raster/CSV formats the library defines. Failures map
//! to exit code 2 for I/O or usage problems and 1 for numerical ones.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;
pub mod manifest;
pub mod output;

pub use config::MocorOverrides;
pub use manifest::RunManifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERIC: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Error carrying the process exit code it should produce.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_USAGE,
            error: error.into(),
        }
    }

    pub fn numeric(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_NUMERIC,
            error: error.into(),
        }
    }
}

impl From<t1map_core::Error> for CliError {
    fn from(e: t1map_core::Error) -> Self {
        if e.is_io() {
            Self::usage(e)
        } else {
            Self::numeric(e)
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "t1map", version, about = "Cardiac T1 mapping with joint motion correction")]
pub struct Cli {
    /// Worker threads; cases are processed concurrently, results do not
    /// depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pixel-wise curve fit of the uncorrected series (baseline).
    Fit(FitArgs),
    /// Joint motion correction and parameter mapping.
    Mocor(MocorArgs),
    /// Generate a synthetic phantom case from a JSON spec.
    Phantom(PhantomArgs),
    /// Score a result directory against a truth directory.
    Eval(EvalArgs),
    /// Segmental ICC3 between two sets of runs.
    Icc(IccArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RingArg {
    Basal,
    Mid,
    Apical,
}

impl From<RingArg> for t1map_core::metrics::Ring {
    fn from(r: RingArg) -> Self {
        match r {
            RingArg::Basal => Self::Basal,
            RingArg::Mid => Self::Mid,
            RingArg::Apical => Self::Apical,
        }
    }
}

/// How segment labels are laid over the reference myocardium.
#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    /// AHA ring of the slice.
    #[arg(long, value_enum, default_value_t = RingArg::Mid)]
    pub ring: RingArg,
    /// Angle in degrees (counterclockwise from +x) where segment numbering starts.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub ref_angle: f64,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Series directories (or manifest files).
    #[arg(required = true)]
    pub series: Vec<PathBuf>,
    /// Binary float32 mask; only these pixels are fitted and summarized.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Output directory (one subdirectory per series when several are given).
    #[arg(long)]
    pub out: PathBuf,
    /// Seed recorded in run.json (the fit itself is deterministic).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub segments: SegmentArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MocorArgs {
    /// Series directories (or manifest files) with segmentations.
    #[arg(required = true)]
    pub series: Vec<PathBuf>,
    /// JSON file with any subset of the configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (one subdirectory per series when several are given).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: MocorOverrides,
    #[command(flatten)]
    pub segments: SegmentArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    /// Phantom spec JSON; omitted keys take their defaults.
    pub spec: PathBuf,
    /// Directory to write the case into.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Series directory with segmentations; phantom truth is used when present.
    pub truth: PathBuf,
    /// Output directory of `fit` or `mocor`, or a series directory.
    pub result: PathBuf,
    /// Metrics CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub segments: SegmentArgs,
}

#[derive(Debug, Clone, Args)]
pub struct IccArgs {
    /// Metrics CSV, or a directory searched recursively for `metrics.csv`.
    pub test: PathBuf,
    /// Same as TEST, for the repeated runs.
    pub retest: PathBuf,
    /// ICC CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(CliError::usage)?;
    pool.install(|| match &cli.command {
        Command::Fit(a) => commands::fit::run(a),
        Command::Mocor(a) => commands::mocor::run(a),
        Command::Phantom(a) => commands::phantom::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Icc(a) => commands::icc::run(a),
    })
}
