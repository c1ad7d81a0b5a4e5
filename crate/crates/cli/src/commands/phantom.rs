//! `t1map phantom`: synthetic case with ground truth.

use std::fs;

use anyhow::Context;
use t1map_core::phantom::{make_phantom, write_case, PhantomSpec};

use crate::output::create_dir;
use crate::{CliError, CliResult, PhantomArgs};

pub fn run(args: &PhantomArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.spec)
        .with_context(|| format!("reading spec {}", args.spec.display()))
        .map_err(CliError::usage)?;
    let mut spec: PhantomSpec = serde_json::from_str(&text)
        .with_context(|| format!("parsing spec {}", args.spec.display()))
        .map_err(CliError::usage)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let case = make_phantom(&spec)?;
    create_dir(&args.out)?;
    write_case(&case, &args.out)?;
    log::info!("phantom (seed {}) -> {}", spec.seed, args.out.display());
    Ok(())
}
