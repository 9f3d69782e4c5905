use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn write(dir: &TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_davies-gap")).args(args).arg(config).output().unwrap()
}

const ONE_QUBIT: &str = r#"{"model": {"kind": "pauli-sum", "n": 1, "terms": [[1.0, "Z"]]}, "jumps": ["X1"]}"#;
const RANDOM: &str = r#"{"model": {"kind": "field-perturbed", "n": 2, "background": "random-zz", "field": {}},
                         "trials": 3, "betas": [0.5, 1.0]}"#;

#[test]
fn gap_writes_json_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", ONE_QUBIT);
    let out = dir.path().join("gap.json");
    let o = run(&["gap", "--out", out.to_str().unwrap()], &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    let gap = &v[0]["gap"];
    assert!((gap["lambda"]["value"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(v[0]["ap"]["length"], 2);
}

#[test]
fn compare_csv_to_stdout() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", RANDOM);
    let o = run(&["compare", "--seed", "4", "--format", "csv"], &cfg);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("index,seed,n,beta,"));
}

#[test]
fn seed_flag_overrides_and_reports_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", &RANDOM.replace("\"trials\"", "\"seed\": 1, \"trials\""));
    let strip = |o: Output| {
        let mut v: Value = serde_json::from_slice(&o.stdout).unwrap();
        for row in v["rows"].as_array_mut().unwrap() {
            row.as_object_mut().unwrap().remove("wall_time");
        }
        v
    };
    let a = strip(run(&["compare", "--seed", "11"], &cfg));
    let b = strip(run(&["compare", "--seed", "11"], &cfg));
    let c = strip(run(&["compare"], &cfg));
    assert_eq!(a, b);
    assert_eq!(a["rows"][0]["seed"], 11);
    assert_eq!(c["rows"][0]["seed"], 1);
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let no_seed = write(&dir, "a.json", RANDOM);
    assert_eq!(run(&["compare"], &no_seed).status.code(), Some(2));
    let too_big = write(&dir, "b.json", r#"{"model": {"kind": "pauli-sum", "n": 9}}"#);
    assert_eq!(run(&["gap"], &too_big).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["gap"], &missing).status.code(), Some(2));
    let bad_scale = write(&dir, "c.json", ONE_QUBIT);
    assert_eq!(run(&["gap", "--tol-scale", "-1"], &bad_scale).status.code(), Some(2));
}

#[test]
fn verify_exit_codes() {
    let dir = TempDir::new().unwrap();
    let good = write(&dir, "good.json", r#"{"seed": 1, "verify": {"trials": 5}}"#);
    let o = run(&["verify", "--format", "csv"], &good);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let broken = write(
        &dir,
        "broken.json",
        r#"{"seed": 1, "model": {"kind": "pauli-sum", "n": 1, "terms": [[1.0, "Z"]]},
            "rate": {"kind": "table", "table": [[-2.0, 1.0], [0.0, 1.0], [2.0, 1.0]]},
            "jumps": ["X1"], "verify": {"suites": ["kms-symmetry"], "trials": 3}}"#,
    );
    let o = run(&["verify"], &broken);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["passed"], false);
    assert!(v["suites"][0]["failure"]["seed"].is_u64());
    assert!(String::from_utf8_lossy(&o.stderr).contains("replay with --seed"));
}

#[test]
fn ap_scan_and_cheeger_run() {
    let dir = TempDir::new().unwrap();
    let scan = write(
        &dir,
        "scan.json",
        r#"{"seed": 2, "trials": 10, "ap_scan": {"families": [
            {"name": "field", "model": {"kind": "pauli-sum", "n": 3, "field": {"P": "Z"}}},
            {"name": "ring", "model": {"kind": "xyz-ring", "n": 3}}]}}"#,
    );
    let o = run(&["ap-scan"], &scan);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["families"].as_array().unwrap().len(), 2);
    assert_eq!(v["families"][1]["closed_form"], true);

    let cfg = write(&dir, "c.json", ONE_QUBIT);
    let o = run(&["cheeger"], &cfg);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["rows"][0]["report"]["margin"].as_f64().unwrap() >= 0.0);
}
