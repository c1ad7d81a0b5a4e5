//! Command-level behaviour of the `t1map` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use t1map_core::imaging::{load_map, save_map, save_mask, Mask, Raster};
use t1map_core::metrics::read_metrics_csv;

fn t1map(args: &[&Path]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_t1map"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "t1map {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run(args: &[&str]) -> Output {
    let paths: Vec<PathBuf> = args.iter().map(PathBuf::from).collect();
    let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    t1map(&refs)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a 48x48 phantom spec and generates the case under `root/name`.
fn phantom(root: &Path, name: &str, seed: u64, amplitude: f64, noise: f64) -> PathBuf {
    let spec = root.join(format!("{name}.json"));
    fs::write(
        &spec,
        serde_json::json!({
            "height": 48, "width": 48,
            "myo_inner_radius": 7.0, "myo_outer_radius": 11.0, "lv_radius": 7.0,
            "body_radius": 21.0, "motion_amplitude": amplitude, "noise_sigma": noise,
            "slice_id": name,
        })
        .to_string(),
    )
    .unwrap();
    let dir = root.join(name);
    run_ok(&["phantom", s(&spec), "--out", s(&dir), "--seed", &seed.to_string()]);
    dir
}

/// Every file under `dir` by relative path.
fn contents(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                out.insert(path.strip_prefix(base).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Run manifest with the fields that legitimately differ between runs
/// (wall time and output location) removed.
fn stable_manifest(dir: &Path) -> serde_json::Value {
    let mut v: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("run.json")).unwrap()).unwrap();
    let obj = v.as_object_mut().unwrap();
    obj.remove("wall_time_s");
    obj.remove("output");
    v
}

fn assert_same_outputs(a: &Path, b: &Path) {
    let (mut ca, mut cb) = (contents(a), contents(b));
    ca.remove(Path::new("run.json"));
    cb.remove(Path::new("run.json"));
    assert_eq!(ca.keys().collect::<Vec<_>>(), cb.keys().collect::<Vec<_>>());
    for (k, v) in &ca {
        assert!(v == &cb[k], "{} differs", k.display());
    }
    assert_eq!(stable_manifest(a), stable_manifest(b));
}

#[test]
fn phantom_with_the_same_seed_is_identical() {
    let root = tempfile::tempdir().unwrap();
    let a = phantom(root.path(), "a", 7, 2.0, 10.0);
    let b = phantom(root.path(), "b", 7, 2.0, 10.0);
    let c = phantom(root.path(), "c", 8, 2.0, 10.0);
    let (ca, cb, cc) = (contents(&a), contents(&b), contents(&c));
    assert!(ca.contains_key(Path::new("manifest.json")));
    assert!(ca.contains_key(Path::new("truth/truth.json")));
    // The spec files differ only in slice_id, which is stored in the manifests.
    let frames = |c: &BTreeMap<PathBuf, Vec<u8>>| -> Vec<Vec<u8>> {
        c.iter().filter(|(k, _)| k.extension().is_some_and(|e| e == "f32")).map(|(_, v)| v.clone()).collect()
    };
    assert_eq!(frames(&ca), frames(&cb));
    assert_ne!(frames(&ca), frames(&cc));
    let root2 = tempfile::tempdir().unwrap();
    let a2 = phantom(root2.path(), "a", 7, 2.0, 10.0);
    assert_eq!(ca, contents(&a2));
}

#[test]
fn fit_writes_maps_metrics_and_manifest() {
    let root = tempfile::tempdir().unwrap();
    let case = phantom(root.path(), "case", 1, 0.0, 0.0);
    let out = root.path().join("fit");
    run_ok(&["fit", s(&case), "--out", s(&out)]);
    for f in ["t1.f32", "r2.f32", "invalid.f32", "param_m0.f32", "param_t1.f32", "t1.ppm", "r2.ppm", "metrics.csv", "run.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let t1 = load_map(&out.join("t1.f32"), 48, 48).unwrap();
    let truth = load_map(&case.join("truth/t1.f32"), 48, 48).unwrap();
    for i in 0..t1.len() {
        if truth.data()[i] > 0.0 {
            assert!((t1.data()[i] - truth.data()[i]).abs() < 1e-3 * truth.data()[i]);
        }
    }
    let rows = read_metrics_csv(&out.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].method, "fit");
    assert!(rows[0].r2_mean.unwrap() > 0.999_999);
    assert!(rows[0].t1_segments.iter().take(12).skip(6).all(|v| v.is_some()));
    assert!(rows[0].t1_segments[..6].iter().all(Option::is_none));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert!(manifest["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn fit_with_a_mask_summarizes_inside_it_only() {
    let root = tempfile::tempdir().unwrap();
    let case = phantom(root.path(), "case", 2, 0.0, 12.0);
    let mask = Mask::from_fn(48, 48, |x, y| x < 20 && y < 30);
    let mask_path = root.path().join("mask.f32");
    save_mask(&mask, &mask_path).unwrap();
    let out = root.path().join("fit");
    run_ok(&["fit", s(&case), "--mask", s(&mask_path), "--out", s(&out)]);
    let r2 = load_map(&out.join("r2.f32"), 48, 48).unwrap();
    let invalid = load_map(&out.join("invalid.f32"), 48, 48).unwrap();
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..mask.len() {
        if mask.data()[i] {
            if invalid.data()[i] == 0.0 {
                sum += r2.data()[i];
                n += 1;
            }
        } else {
            assert_eq!(invalid.data()[i], 1.0, "pixel {i} outside the mask was fitted");
        }
    }
    let rows = read_metrics_csv(&out.join("metrics.csv")).unwrap();
    // Maps are stored as float32, the summary is computed in f64.
    assert!((rows[0].r2_mean.unwrap() - sum / n as f64).abs() < 1e-6);
}

#[test]
fn usage_and_io_errors_exit_with_two() {
    let root = tempfile::tempdir().unwrap();
    let out = run(&["fit", s(&root.path().join("missing")), "--out", s(&root.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert_eq!(run(&["fit"]).status.code(), Some(2));
    assert_eq!(run(&["bogus"]).status.code(), Some(2));
    let case = phantom(root.path(), "case", 3, 0.0, 0.0);
    let bad = root.path().join("bad.json");
    fs::write(&bad, r#"{"lambda9": 1}"#).unwrap();
    let out = run(&["mocor", s(&case), "--config", s(&bad), "--out", s(&root.path().join("m"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["mocor", s(&case), "--iters", "0", "--out", s(&root.path().join("m"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numeric_failures_exit_with_one() {
    let root = tempfile::tempdir().unwrap();
    let case = phantom(root.path(), "case", 4, 0.0, 0.0);
    for i in 0..11 {
        save_map(&Raster::zeros(48, 48), &case.join(format!("frame_{i:02}.f32"))).unwrap();
    }
    let out = run(&["fit", s(&case), "--out", s(&root.path().join("fit"))]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("constant series"));
}

fn loss_totals(dir: &Path) -> Vec<f64> {
    let mut r = csv::Reader::from_path(dir.join("loss_trace.csv")).unwrap();
    let header = r.headers().unwrap().clone();
    let col = header.iter().position(|h| h == "total").unwrap();
    r.records().map(|rec| rec.unwrap()[col].parse().unwrap()).collect()
}

#[test]
fn mocor_writes_outputs_reduces_the_loss_and_is_deterministic() {
    let root = tempfile::tempdir().unwrap();
    let case = phantom(root.path(), "case", 5, 2.0, 12.0);
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for out in [&a, &b] {
        run_ok(&["mocor", s(&case), "--iters", "25", "--out", s(out)]);
    }
    for f in ["t1.f32", "r2.f32", "t1.ppm", "metrics.csv", "loss_trace.csv", "diagnostics.json", "run.json", "fields/dx_03.f32", "fields/vy_03.f32", "corrected/manifest.json", "corrected/frame_10.f32"] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let totals = loss_totals(&a);
    assert_eq!(totals.len(), 26);
    assert!(totals.last().unwrap() < &totals[0]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["iters"], 25);
    assert_eq!(manifest["config"]["lambda3"], 80000.0);
    let rows = read_metrics_csv(&a.join("metrics.csv")).unwrap();
    assert_eq!(rows[0].method, "mocor");
    assert!(rows[0].folds.is_some() && rows[0].mean_det_j.is_some());
    assert_same_outputs(&a, &b);
}

#[test]
fn without_seg_weight_shuffled_lv_masks_change_nothing() {
    let root = tempfile::tempdir().unwrap();
    let case = phantom(root.path(), "case", 6, 2.0, 12.0);
    let config = root.path().join("cfg.json");
    fs::write(&config, r#"{"lambda3": 0.0, "iters": 15}"#).unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    run_ok(&["mocor", s(&case), "--config", s(&config), "--out", s(&a)]);
    // Rotate the LV masks across frames and blank one of them.
    let lv: Vec<Vec<u8>> = (0..11).map(|i| fs::read(case.join(format!("lv_{i:02}.f32"))).unwrap()).collect();
    for i in 0..11 {
        fs::write(case.join(format!("lv_{i:02}.f32")), &lv[(i + 4) % 11]).unwrap();
    }
    save_mask(&Mask::empty(48, 48), &case.join("lv_02.f32")).unwrap();
    run_ok(&["mocor", s(&case), "--config", s(&config), "--out", s(&b)]);
    let (ca, cb) = (contents(&a), contents(&b));
    for (k, v) in &ca {
        // AHA sectors are centred on the LV cavity, so only the segmental
        // report may move; every field, map and loss value must not.
        if k != Path::new("run.json") && k != Path::new("metrics.csv") {
            assert!(v == &cb[k], "{} differs", k.display());
        }
    }
}

#[test]
fn eval_of_a_result_against_itself_is_perfect() {
    let root = tempfile::tempdir().unwrap();
    let case = phantom(root.path(), "case", 7, 2.0, 12.0);
    fs::remove_dir_all(case.join("truth")).unwrap();
    let out = root.path().join("eval.csv");
    run_ok(&["eval", s(&case), s(&case), "--out", s(&out)]);
    let rows = read_metrics_csv(&out).unwrap();
    assert_eq!(rows.len(), 12);
    for row in &rows {
        assert_eq!(row.dice, Some(1.0), "{row:?}");
        assert_eq!(row.hd_mm, Some(0.0), "{row:?}");
    }
}

#[test]
fn eval_against_phantom_truth_shows_the_correction() {
    let root = tempfile::tempdir().unwrap();
    let case = phantom(root.path(), "case", 8, 2.0, 12.0);
    let (fit, mocor) = (root.path().join("fit"), root.path().join("mocor"));
    run_ok(&["fit", s(&case), "--out", s(&fit)]);
    run_ok(&["mocor", s(&case), "--iters", "80", "--out", s(&mocor)]);
    let (ef, em) = (root.path().join("ef.csv"), root.path().join("em.csv"));
    run_ok(&["eval", s(&case), s(&fit), "--out", s(&ef)]);
    run_ok(&["eval", s(&case), s(&mocor), "--out", s(&em)]);
    let before = read_metrics_csv(&ef).unwrap().pop().unwrap();
    let after = read_metrics_csv(&em).unwrap().pop().unwrap();
    assert_eq!((before.method.as_str(), after.method.as_str()), ("fit", "mocor"));
    assert!(after.dice.unwrap() > before.dice.unwrap(), "{before:?} {after:?}");
    assert!(after.hd_mm.unwrap() < before.hd_mm.unwrap());
    assert!(after.r2_mean.unwrap() > before.r2_mean.unwrap());
    assert_eq!(after.folds, Some(0));
    assert!(before.folds.is_none());
}

#[test]
fn icc_of_a_duplicated_run_is_one() {
    let root = tempfile::tempdir().unwrap();
    let cases: Vec<PathBuf> = (0..4)
        .map(|k| phantom(root.path(), &format!("case{k}"), 20 + k, 0.0, 40.0))
        .collect();
    let runs = root.path().join("runs");
    let mut args = vec!["fit"];
    args.extend(cases.iter().map(|c| s(c)));
    args.extend(["--out", s(&runs), "--jobs", "2"]);
    run_ok(&args);
    let copy = root.path().join("copy");
    fs::create_dir(&copy).unwrap();
    for k in 0..4 {
        let name = format!("case{k}");
        fs::create_dir(copy.join(&name)).unwrap();
        fs::copy(runs.join(&name).join("metrics.csv"), copy.join(&name).join("metrics.csv")).unwrap();
    }
    let out = root.path().join("icc.csv");
    run_ok(&["icc", s(&runs), s(&copy), "--out", s(&out)]);
    let mut r = csv::Reader::from_path(&out).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 17);
    // Mid-ring segments 7..=12 are populated in every case.
    for row in &rows[6..12] {
        assert_eq!(&row[1], "4");
        assert_eq!(row[2].parse::<f64>().unwrap(), 1.0, "{row:?}");
    }
    assert_eq!(&rows[16][0], "all");
    assert_eq!(rows[16][2].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn jobs_do_not_change_results() {
    let root = tempfile::tempdir().unwrap();
    let cases: Vec<PathBuf> = (0..3)
        .map(|k| phantom(root.path(), &format!("case{k}"), 30 + k, 1.5, 12.0))
        .collect();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for (out, jobs) in [(&a, "1"), (&b, "3")] {
        let mut args = vec!["mocor"];
        args.extend(cases.iter().map(|c| s(c)));
        args.extend(["--iters", "10", "--jobs", jobs, "--out", s(out)]);
        run_ok(&args);
    }
    assert_same_outputs(&a, &b);
}
