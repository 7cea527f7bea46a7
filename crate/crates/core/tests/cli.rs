use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn kgfl(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgfl"))
        .args(args)
        .env("KGFL_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn ok(root: &Path, args: &[&str]) -> PathBuf {
    let out = kgfl(root, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn dir_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn collect_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(tmp.path(), &["collect", "--output_dir", &dir_arg(&a), "--seed", "4"]);
    ok(tmp.path(), &["collect", "--output_dir", &dir_arg(&b), "--seed", "4"]);
    let ta = fs::read_to_string(a.join("trajectory.csv")).unwrap();
    assert_eq!(ta, fs::read_to_string(b.join("trajectory.csv")).unwrap());
    // header plus N + 1 samples
    assert_eq!(ta.lines().count(), 302);
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config"]["seed"], 4);
}

#[test]
fn default_output_goes_under_the_root() {
    let tmp = TempDir::new().unwrap();
    let dir = ok(tmp.path(), &["collect", "--n", "20"]);
    assert_eq!(dir, tmp.path().join("collect"));
    assert!(dir.join("trajectory.csv").exists());
}

#[test]
fn fit_writes_artifacts_and_reruns_from_manifest() {
    let tmp = TempDir::new().unwrap();
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    ok(tmp.path(), &["fit", "--output_dir", &dir_arg(&first), "--solver", "single_step"]);
    for f in ["trajectory.csv", "cost_trace.csv", "params.json", "manifest.json"] {
        assert!(first.join(f).exists(), "missing {f}");
    }
    let manifest = first.join("manifest.json");
    ok(
        tmp.path(),
        &["fit", "--config", manifest.to_str().unwrap(), "--output_dir", &dir_arg(&second)],
    );
    for f in ["trajectory.csv", "cost_trace.csv"] {
        assert_eq!(
            fs::read_to_string(first.join(f)).unwrap(),
            fs::read_to_string(second.join(f)).unwrap(),
            "{f} differs on rerun"
        );
    }
    let (pa, pb) = (json(&first.join("params.json")), json(&second.join("params.json")));
    assert_eq!(pa["k"], pb["k"]);
    assert_eq!(pa["g"], pb["g"]);
}

#[test]
fn closedloop_with_oracle_only_and_baseline() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("cl");
    ok(
        tmp.path(),
        &["closedloop", "--output_dir", &dir_arg(&dir), "--closed_loop.baseline", "true", "--closed_loop.t_end", "3"],
    );
    for f in ["closedloop_oracle.csv", "closedloop_baseline.csv", "summary.json"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    assert!(!dir.join("closedloop_learned.csv").exists());
    let s = json(&dir.join("summary.json"));
    assert!(s.get("q_learned").is_none_or(Value::is_null));
    assert!(s["oracle"].is_object());
}

#[test]
fn closedloop_from_fitted_params() {
    let tmp = TempDir::new().unwrap();
    let fit = tmp.path().join("fit");
    let cl = tmp.path().join("cl");
    ok(tmp.path(), &["fit", "--output_dir", &dir_arg(&fit), "--solver", "single_step"]);
    let params = fit.join("params.json");
    ok(
        tmp.path(),
        &[
            "closedloop",
            "--params",
            params.to_str().unwrap(),
            "--output_dir",
            &dir_arg(&cl),
            "--closed_loop.t_end",
            "3",
        ],
    );
    assert!(cl.join("closedloop_learned.csv").exists());
    let s = json(&cl.join("summary.json"));
    assert!(s["learned"].is_object());
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    // unknown config key
    assert_eq!(kgfl(tmp.path(), &["collect", "--bogus", "1"]).status.code(), Some(2));
    // malformed config file
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(kgfl(tmp.path(), &["fit", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    // missing params file
    let missing = tmp.path().join("nope.json");
    assert_eq!(
        kgfl(tmp.path(), &["closedloop", "--params", missing.to_str().unwrap()]).status.code(),
        Some(2)
    );
    // invalid value
    assert_eq!(kgfl(tmp.path(), &["collect", "--tau", "-1"]).status.code(), Some(2));
    // config errors are caught before anything is written
    let early = tmp.path().join("early");
    assert_eq!(kgfl(tmp.path(), &["collect", "--output_dir", &dir_arg(&early), "--n", "0"]).status.code(), Some(2));
    assert!(!early.exists());
    // a numerical failure exits 1 and still leaves a manifest behind
    let dir = tmp.path().join("failed");
    let out = kgfl(tmp.path(), &["collect", "--output_dir", &dir_arg(&dir), "--x0", "[1e200,1e200]"]);
    assert_eq!(out.status.code(), Some(1));
    let m = json(&dir.join("manifest.json"));
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("diverged"));
}

#[test]
fn sweep_summary_matches_rows() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("sweep");
    ok(
        tmp.path(),
        &[
            "sweep",
            "--kind",
            "data-size",
            "--grid",
            "100,200",
            "--runs",
            "3",
            "--output_dir",
            &dir_arg(&dir),
            "--solver",
            "single_step",
            "--closed_loop.t_end",
            "3",
        ],
    );
    let csv = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let rows = kgfl::cli::pipeline::parse_sweep_csv(&csv).unwrap();
    assert_eq!(rows.len(), 6);
    let recomputed = serde_json::to_value(kgfl::cli::pipeline::summarize(&rows)).unwrap();
    let written = json(&dir.join("summary.json"));
    assert_eq!(written["cells"], recomputed);
}

#[test]
fn verify_reports_a_verdict() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("verify");
    ok(tmp.path(), &["verify", "--output_dir", &dir_arg(&dir), "--verify.points", "10"]);
    let r = json(&dir.join("report.json"));
    assert_eq!(r["system"], "vanderpol");
    assert_eq!(r["verdict"], true);
    let reports = r["reports"].as_array().unwrap();
    assert!(reports.iter().all(|p| p["points"].as_array().unwrap().len() == 10));
}
