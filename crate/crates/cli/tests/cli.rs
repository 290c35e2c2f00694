use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_relbin");

const CONFIG: &str = r#"{
    "version": 1,
    "seed": 7,
    "model": {"features": 4, "factors": {"rows": 2, "choices": 2, "reals": 2}},
    "schedule": {"iterations": 60, "burn_in": 20, "thin": 2, "checkpoint_every": 20},
    "simulate": {"n_rows": 12, "category_counts": [2, 3, 2], "n_real": 3, "planted": {"rank_x": 1}},
    "data": {"categorical": "sim/categorical.csv", "real": "sim/real.csv", "schema": "sim/schema.json"},
    "evaluate": {"fractions": [0.2], "repeats": 2, "n_mc": 50},
    "cluster": {"cut": 2}
}"#;

fn relbin(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn relbin")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = relbin(dir, args);
    assert!(
        out.status.success(),
        "relbin {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), CONFIG).unwrap();
    ok(dir.path(), &["simulate", "--config", "c.json", "--out", "sim"]);
    dir
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn pipeline_writes_every_output() {
    let d = setup();
    let p = d.path();
    for f in ["categorical.csv", "real.csv", "schema.json", "truth.json", "run_config.json"] {
        assert!(p.join("sim").join(f).exists(), "{f}");
    }
    let truth: serde_json::Value = serde_json::from_slice(&read(p, "sim/truth.json")).unwrap();
    assert_eq!(truth["effective_rank_x"], 1);
    assert!(truth["config_hash"].as_str().unwrap().len() == 64);

    ok(p, &["fit", "--config", "c.json", "--out", "fit"]);
    for f in ["trace.jsonl", "progress.jsonl", "checkpoint.json", "diagnostics.json", "run_config.json"] {
        assert!(p.join("fit").join(f).exists(), "{f}");
    }
    assert!(!p.join("fit/timings.jsonl").exists());
    let diag: serde_json::Value = serde_json::from_slice(&read(p, "fit/diagnostics.json")).unwrap();
    assert_eq!(diag["retained_samples"], 20);
    assert_eq!(diag["mh"].as_array().unwrap().len(), 3);

    ok(p, &["summarize", "--config", "c.json", "--out", "fit"]);
    let manifest: serde_json::Value = serde_json::from_slice(&read(p, "fit/manifest.json")).unwrap();
    assert_eq!(manifest["config_hash"], diag["config_hash"]);
    for f in manifest["files"].as_array().unwrap() {
        assert!(p.join("fit").join(f["file"].as_str().unwrap()).exists());
    }

    ok(p, &["cluster", "--config", "c.json", "--input", "fit/correlation_rows.csv", "--out", "cl"]);
    let nwk = String::from_utf8(read(p, "cl/tree.nwk")).unwrap();
    assert!(nwk.trim_end().ends_with(';'));
    let clusters = String::from_utf8(read(p, "cl/clusters.csv")).unwrap();
    assert_eq!(clusters.lines().count(), 13);
    let leaves = String::from_utf8(read(p, "cl/leaf_order.csv")).unwrap();
    assert_eq!(leaves.lines().count(), 13);
}

#[test]
fn evaluate_writes_one_row_per_run() {
    let d = setup();
    let p = d.path();
    ok(p, &["evaluate", "--config", "c.json", "--out", "ev"]);
    let runs = String::from_utf8(read(p, "ev/eval_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 2 * 2);
    let summary = String::from_utf8(read(p, "ev/eval_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2);
    assert!(!p.join("ev/eval_timings.csv").exists());
    let report: serde_json::Value = serde_json::from_slice(&read(p, "ev/eval.json")).unwrap();
    assert!(report.get("runtime_seconds").is_none());
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let d = setup();
    let p = d.path();
    for w in ["1", "3"] {
        ok(p, &["fit", "--config", "c.json", "--out", &format!("fit{w}"), "--workers", w]);
        ok(p, &["evaluate", "--config", "c.json", "--out", &format!("ev{w}"), "--workers", w]);
    }
    for f in ["trace.jsonl", "progress.jsonl", "checkpoint.json", "diagnostics.json"] {
        assert_eq!(read(p, &format!("fit1/{f}")), read(p, &format!("fit3/{f}")), "{f}");
    }
    for f in ["eval.json", "eval_runs.csv", "eval_summary.csv"] {
        assert_eq!(read(p, &format!("ev1/{f}")), read(p, &format!("ev3/{f}")), "{f}");
    }
}

#[test]
fn resumed_fit_matches_uninterrupted_fit() {
    let d = setup();
    let p = d.path();
    ok(p, &["fit", "--config", "c.json", "--out", "full"]);
    ok(p, &["fit", "--config", "c.json", "--out", "part", "--halt-after", "47"]);
    ok(p, &["fit", "--config", "c.json", "--out", "part", "--resume"]);
    for f in ["trace.jsonl", "progress.jsonl", "checkpoint.json"] {
        assert_eq!(read(p, &format!("full/{f}")), read(p, &format!("part/{f}")), "{f}");
    }
}

#[test]
fn resume_with_another_seed_is_refused() {
    let d = setup();
    let p = d.path();
    ok(p, &["fit", "--config", "c.json", "--out", "part", "--halt-after", "30"]);
    let out = relbin(p, &["fit", "--config", "c.json", "--out", "part", "--resume", "--seed", "8"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_flag_overrides_config() {
    let d = setup();
    let p = d.path();
    ok(p, &["simulate", "--config", "c.json", "--out", "s8", "--seed", "8"]);
    assert_ne!(read(p, "sim/categorical.csv"), read(p, "s8/categorical.csv"));
    let cfg: serde_json::Value = serde_json::from_slice(&read(p, "s8/run_config.json")).unwrap();
    assert_eq!(cfg["seed"], 8);
}

#[test]
fn usage_errors_exit_with_two() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let code = |args: &[&str]| relbin(p, args).status.code();
    assert_eq!(code(&["fit", "--config", "missing.json"]), Some(2));
    assert_eq!(code(&["fit", "--categorical", "missing.csv"]), Some(2));
    assert_eq!(code(&["fit"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(code(&["simulate", "--workers", "0"]), Some(2));
    assert_eq!(code(&["cluster", "--input", "x.csv", "--resume"]), Some(2));
    fs::write(p.join("bad.json"), r#"{"version": 1, "schedule": {"iterations": 5, "burn_in": 9}}"#).unwrap();
    assert_eq!(code(&["simulate", "--config", "bad.json"]), Some(2));
    fs::write(p.join("typo.json"), r#"{"version": 1, "sedd": 3}"#).unwrap();
    assert_eq!(code(&["simulate", "--config", "typo.json"]), Some(2));
    assert_eq!(code(&["--help"]), Some(0));
}
