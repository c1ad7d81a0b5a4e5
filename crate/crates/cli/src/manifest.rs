//! Record of one command invocation, written next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub const RUN_MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    pub seed: u64,
    pub version: String,
    /// Seconds spent in the command; the only field that varies between
    /// identical runs.
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: serde_json::Value,
        inputs: Vec<PathBuf>,
        output: &Path,
        seed: u64,
        wall_time_s: f64,
    ) -> Self {
        Self {
            command: command.to_string(),
            config,
            inputs,
            output: output.to_path_buf(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s,
        }
    }

    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(RUN_MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::usage(anyhow::anyhow!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage(anyhow::anyhow!("{}: {e}", path.display())))
    }

    /// Writes `run.json` into `dir` via a temporary file and a rename, so a
    /// reader never sees a partial manifest.
    pub fn write_atomic(&self, dir: &Path) -> CliResult<()> {
        write_atomic(
            &dir.join(RUN_MANIFEST_FILE),
            serde_json::to_string_pretty(self).expect("manifest serializes").as_bytes(),
        )
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| CliError::usage(anyhow::anyhow!("writing {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_leaves_no_temporary_file() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new(
            "fit",
            serde_json::json!({"seed": 3}),
            vec![PathBuf::from("in")],
            dir.path(),
            3,
            0.25,
        );
        m.write_atomic(dir.path()).unwrap();
        assert_eq!(RunManifest::read(dir.path()).unwrap(), m);
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![std::ffi::OsString::from(RUN_MANIFEST_FILE)]);
    }
}
