use std::path::Path;
use std::process::{Command, Output};

use abpc::io::read_csv;

fn abpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abpc")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn list_presets_names_all() {
    let out = abpc(&["list-presets"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["e1", "e2", "e2b", "e2b_lag", "e2b_noise", "e3", "e4", "e5", "e6", "e6_noise", "e7"] {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(name)), "{name}");
    }
}

#[test]
fn validate_reports_config_errors() {
    assert_eq!(code(&abpc(&["validate", "e1"])), 0);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\n[kernel]\nkind = \"unitary\"\nbogus = 3\n").unwrap();
    let out = abpc(&["validate", path(&bad)]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 4") && err.contains("bogus"), "{err}");
    assert_eq!(code(&abpc(&["validate", "no_such_preset"])), 2);
    assert_eq!(code(&abpc(&["run", "e1", "--kernel", "spline"])), 2);
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = abpc(&["run", "e1", "--kernel", "linear", "--out-dir", path(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let log = read_csv(&dir.path().join("log.csv")).unwrap();
    assert_eq!(log.rows.len(), 250);
    assert_eq!(&log.headers[..4], ["k", "r_1", "u_1", "y_1"]);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["rmse"].as_f64().unwrap() < 0.05);
    assert_eq!(metrics["window"], serde_json::json!([51, 250]));
}

#[test]
fn seed_flag_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert_eq!(code(&abpc(&["run", "e2", "--seed", "7", "--out-dir", path(d.path())])), 0);
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("log.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn stopped_run_exits_numerical_and_keeps_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = abpc(&["run", "e5", "--out-dir", path(dir.path())]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let log = read_csv(&dir.path().join("log.csv")).unwrap();
    assert!(!log.rows.is_empty() && log.rows.len() < 250);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["completed"], serde_json::json!(false));
    assert!(metrics["failure_step"].as_u64().is_some());
}

#[test]
fn sweep_writes_one_row_per_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let out = abpc(&["sweep", "e2", "--out-dir", path(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let t = read_csv(&dir.path().join("sweep.csv")).unwrap();
    assert_eq!(t.headers, ["omega", "rmse", "bounded_flag"]);
    assert_eq!(t.rows.len(), 64);
    assert_eq!(t.rows[0][0], Some(0.0));
    assert_eq!(t.rows[63][0], Some(std::f64::consts::PI));
}

#[test]
fn audit_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = abpc(&["audit", "--out-dir", path(dir.path())]);
    assert_eq!(code(&out), 0);
    let reports: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("audit.json")).unwrap()).unwrap();
    let reports = reports.as_array().unwrap();
    assert!(reports.len() >= 5);
    assert!(reports.iter().all(|r| r["pass"] == serde_json::json!(true)));
}
