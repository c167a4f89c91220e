use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ggd_core::ggd::GgdTrace;
use ggd_core::Dataset;

fn ggd(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ggd"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("GGD_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = ggd(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

const HAYSTACK: &[&str] = &[
    "generate", "haystack", "--D", "100", "--d", "5", "--n-in", "200", "--n-out", "200",
    "--sigma-in", "1", "--sigma-out", "1", "--seed", "7",
];

#[test]
fn generate_writes_dataset_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), HAYSTACK);
    let text = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert_eq!(text.lines().count(), 401);
    assert!(dir.path().join("data.meta.json").exists());
    let ds = Dataset::read_files(dir.path().join("data.csv")).unwrap();
    assert_eq!((ds.n_inliers(), ds.n_outliers()), (200, 200));
    assert_eq!(ds.ground_truth().unwrap().dim(), 5);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("generate.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["params"]["D"], 100);
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        ok(dir.path(), HAYSTACK);
        let data = dir.path().join("data.csv");
        ok(dir.path(), &["run", "--data", data.to_str().unwrap(), "--max-iters", "50"]);
    }
    for name in ["data.csv", "data.meta.json", "trace.csv", "subspace.csv", "summary.json"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn inlier_only_dataset() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "haystack", "--D", "10", "--d", "2", "--n-in", "30", "--n-out", "0"]);
    let ds = Dataset::read_files(dir.path().join("data.csv")).unwrap();
    assert_eq!(ds.n_outliers(), 0);
    assert_eq!(ds.n_inliers(), 30);
    let text = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",in")));
}

#[test]
fn run_reaches_truth_and_reports_it() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), HAYSTACK);
    let data = dir.path().join("data.csv");
    let stdout = ok(dir.path(), &["run", "--data", data.to_str().unwrap(), "--max-iters", "400"]);
    let theta: f64 = stdout
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("final_theta="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(theta <= 1e-6, "final theta {theta}");
    let trace = GgdTrace::from_csv_str(&fs::read_to_string(dir.path().join("trace.csv")).unwrap()).unwrap();
    assert!(trace.iterations() <= 400);
}

#[test]
fn sqrt_schedule_is_echoed_in_trace() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), HAYSTACK);
    let data = dir.path().join("data.csv");
    ok(dir.path(), &["run", "--data", data.to_str().unwrap(), "--schedule", "sqrt", "--s", "0.01", "--max-iters", "30"]);
    let trace = GgdTrace::from_csv_str(&fs::read_to_string(dir.path().join("trace.csv")).unwrap()).unwrap();
    for r in &trace.records {
        let want = 0.01 / (r.k as f64).sqrt();
        assert!((r.step - want).abs() <= 1e-15 * want, "k={} step={}", r.k, r.step);
    }
}

#[test]
fn run_without_ground_truth_leaves_theta_empty() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "haystack", "--D", "12", "--d", "2", "--n-in", "40", "--n-out", "20"]);
    fs::remove_file(dir.path().join("data.meta.json")).unwrap();
    let data = dir.path().join("data.csv");
    let stdout = ok(dir.path(), &["run", "--data", data.to_str().unwrap(), "--d", "2", "--max-iters", "20"]);
    assert!(stdout.contains("final_theta=NA"));
    let text = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let trace = GgdTrace::from_csv_str(&text).unwrap();
    assert!(trace.records.iter().all(|r| r.theta_truth.is_none()));

    let o = ggd(dir.path(), &["run", "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "d cannot be inferred");
}

#[test]
fn stability_single_cell_grid() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "haystack", "--D", "20", "--d", "3", "--n-in", "60", "--n-out", "30"]);
    let data = dir.path().join("data.csv");
    ok(dir.path(), &["stability", "--data", data.to_str().unwrap(), "--n-angles", "1", "--per-angle", "1"]);
    let grid = fs::read_to_string(dir.path().join("stability_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 2);
    let report = fs::read_to_string(dir.path().join("stability_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
}

#[test]
fn convergence_traces_share_start() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "haystack", "--D", "30", "--d", "3", "--n-in", "80", "--n-out", "40"]);
    let data = dir.path().join("data.csv");
    ok(dir.path(), &["convergence", "--data", data.to_str().unwrap(), "--max-iters", "100"]);
    let text = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let firsts: Vec<&str> = text
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(1) == Some("1"))
        .map(|l| l.split(',').nth(6).unwrap())
        .collect();
    assert_eq!(firsts.len(), 4);
    assert!(firsts.iter().all(|t| *t == firsts[0]));
}

#[test]
fn phase_without_inliers_never_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(
        dir.path(),
        &["phase", "--D", "20", "--d", "2", "--n-out", "20", "--snrs", "0,3", "--trials", "3"],
    );
    assert!(stdout.contains("snr=0.000000e0 success_rate=0.000"));
    let text = fs::read_to_string(dir.path().join("phase.csv")).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(dir.path().join("phase.manifest.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(ggd(dir.path(), &["run", "--data", missing.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(ggd(dir.path(), &["run", "--data", "x", "--schedule", "nope"]).status.code(), Some(2));
    let bad = ["generate", "haystack", "--D", "5", "--d", "5", "--n-in", "1", "--n-out", "1"];
    assert_eq!(ggd(dir.path(), &bad).status.code(), Some(2));
    fs::write(&missing, "x0,label\nfoo,in\n").unwrap();
    assert_eq!(ggd(dir.path(), &["run", "--data", missing.to_str().unwrap(), "--d", "1"]).status.code(), Some(3));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ggd"))
        .args(["generate", "haystack", "--D", "6", "--d", "1", "--n-in", "3", "--n-out", "3"])
        .env("GGD_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("data.csv").exists());
}
