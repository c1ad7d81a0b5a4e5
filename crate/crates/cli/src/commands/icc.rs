//! `t1map icc`: segmental test-retest agreement of two sets of runs.
//!
//! Rows of the two metrics sets are paired by (case, slice, method). Each of
//! the 16 segments gets ICC(3,1) over the pairs where both runs report a
//! mean, and a pooled row uses every segment pair. ICC is left empty where it
//! is undefined (fewer than three pairs, or no between-subject variance).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use t1map_core::metrics::{icc3, read_metrics_csv, MetricsRow, SEGMENTS};

use crate::output::{create_dir, METRICS_FILE};
use crate::{CliError, CliResult, IccArgs};

#[derive(Debug, Serialize)]
struct IccRow {
    segment: String,
    n: usize,
    icc: Option<f64>,
}

type Key = (String, String, String);

fn metrics_files(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| CliError::usage(anyhow::anyhow!("{}: {e}", path.display())))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::usage(anyhow::anyhow!("{}: {e}", path.display())))?;
    entries.sort();
    let mut files = Vec::new();
    for entry in entries {
        if entry.is_dir() {
            files.extend(metrics_files(&entry)?);
        } else if entry.file_name().is_some_and(|n| n == METRICS_FILE) {
            files.push(entry);
        }
    }
    Ok(files)
}

fn load_rows(path: &Path) -> CliResult<BTreeMap<Key, MetricsRow>> {
    let files = metrics_files(path)?;
    if files.is_empty() {
        return Err(CliError::usage(anyhow::anyhow!(
            "no {METRICS_FILE} found under {}",
            path.display()
        )));
    }
    let mut rows = BTreeMap::new();
    for file in files {
        for row in read_metrics_csv(&file)? {
            let key = (row.case.clone(), row.slice.clone(), row.method.clone());
            if rows.insert(key.clone(), row).is_some() {
                return Err(CliError::usage(anyhow::anyhow!(
                    "duplicate metrics row {key:?} under {}",
                    path.display()
                )));
            }
        }
    }
    Ok(rows)
}

fn agreement(pairs: &[(f64, f64)]) -> Option<f64> {
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    icc3(&a, &b).ok()
}

pub fn run(args: &IccArgs) -> CliResult<()> {
    let test = load_rows(&args.test)?;
    let retest = load_rows(&args.retest)?;
    let mut per_segment: Vec<Vec<(f64, f64)>> = vec![Vec::new(); SEGMENTS];
    for (key, a) in &test {
        let Some(b) = retest.get(key) else { continue };
        for (s, pairs) in per_segment.iter_mut().enumerate() {
            let get = |r: &MetricsRow| r.t1_segments.get(s).copied().flatten();
            if let (Some(x), Some(y)) = (get(a), get(b)) {
                pairs.push((x, y));
            }
        }
    }
    let mut out: Vec<IccRow> = per_segment
        .iter()
        .enumerate()
        .map(|(s, pairs)| IccRow {
            segment: format!("{:02}", s + 1),
            n: pairs.len(),
            icc: agreement(pairs),
        })
        .collect();
    let pooled: Vec<(f64, f64)> = per_segment.concat();
    out.push(IccRow {
        segment: "all".to_string(),
        n: pooled.len(),
        icc: agreement(&pooled),
    });

    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut w = csv::Writer::from_path(&args.out).map_err(CliError::usage)?;
    for row in &out {
        w.serialize(row).map_err(CliError::usage)?;
    }
    w.flush()
        .map_err(|e| CliError::usage(anyhow::anyhow!("writing {}: {e}", args.out.display())))?;
    log::info!("icc over {} paired rows -> {}", pooled.len(), args.out.display());
    Ok(())
}
