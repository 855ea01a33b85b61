use std::path::Path;
use std::process::{Command, Output};

fn persuade(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_persuade"))
        .args(args)
        .current_dir(dir)
        .env_remove("PERSUADE_OUT")
        .output()
        .expect("binary runs")
}

const THRESHOLD: &str = r#"{
  "version": 1,
  "distribution": {"kind": "uniform", "lo": 0.0, "hi": 1.0},
  "types": [{"label": "receiver", "weight": 1.0}],
  "actions": ["stay", "act"],
  "u1": [[0.0, 1.0]],
  "u2": [[0.0, -0.75]],
  "v2": [[0.0, 1.0]]
}"#;

const TWO_TYPES: &str = r#"{
  "version": 1,
  "distribution": {"kind": "pl_cdf", "knots": [[0.0, 0.0], [0.4, 0.6], [1.0, 1.0]]},
  "types": [{"label": "a", "weight": 2.0}, {"label": "b", "weight": 2.0}],
  "actions": ["no", "yes"],
  "u1": [[0.0, 1.0], [0.0, 1.0]],
  "u2": [[0.0, -0.6], [0.0, -0.8]],
  "v1": [[0.0, 0.0], [0.0, 0.0]],
  "v2": [[0.0, 1.0], [0.0, 1.0]]
}"#;

fn setup(body: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("problem.json"), body).unwrap();
    dir
}

fn objective(dir: &Path, sub: &str) -> f64 {
    let text = std::fs::read_to_string(dir.join(sub).join("solution.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["objective"].as_f64().unwrap()
}

#[test]
fn partition_then_verify_round_trip() {
    let dir = setup(TWO_TYPES);
    let out = persuade(&["partition", "problem.json", "--out", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("renormalizing"));
    let csv = std::fs::read_to_string(dir.path().join("run/mechanism.csv")).unwrap();
    assert!(csv.starts_with("type,message,action,interval_lo,interval_hi\n"));
    let out = persuade(
        &[
            "verify", "problem.json", "--mechanism", "run/mechanism.json", "--solution", "run/solution.json",
            "--mc", "20000", "--seed", "5", "--out", "run",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["monte_carlo"]["seed"], 5);
}

#[test]
fn tampered_mechanism_fails_verify() {
    let dir = setup(THRESHOLD);
    assert!(persuade(&["partition", "problem.json", "--out", "run"], dir.path()).status.success());
    let path = dir.path().join("run/mechanism.json");
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    doc["mechanism"]["types"][0]["messages"][1]["intervals"][0][0] = serde_json::json!(0.4);
    std::fs::write(&path, doc.to_string()).unwrap();
    let out = persuade(
        &["verify", "problem.json", "--mechanism", "run/mechanism.json", "--solution", "run/solution.json", "--out", "run"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn public_equals_private_for_one_type() {
    let dir = setup(THRESHOLD);
    assert!(persuade(&["solve", "problem.json", "--out", "a"], dir.path()).status.success());
    assert!(persuade(&["solve", "problem.json", "--public", "--out", "b"], dir.path()).status.success());
    assert!((objective(dir.path(), "a") - objective(dir.path(), "b")).abs() < 1e-9);
}

#[test]
fn output_is_byte_identical() {
    let dir = setup(TWO_TYPES);
    for sub in ["a", "b"] {
        assert!(persuade(&["partition", "problem.json", "--out", sub], dir.path()).status.success());
    }
    for f in ["solution.json", "mechanism.json", "mechanism.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn oracle_on_threshold() {
    let dir = setup(THRESHOLD);
    let out = persuade(&["oracle", "problem.json", "--bins", "2000", "--out", "o"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/oracle.json")).unwrap()).unwrap();
    assert!((v["oracle"]["objective"].as_f64().unwrap() - 0.5).abs() <= 1e-3);
}

#[test]
fn impossible_participation_exits_two() {
    let body = THRESHOLD.replace("\"v2\"", "\"participation\": [0.5],\n  \"v2\"");
    let dir = setup(&body);
    let out = persuade(&["solve", "problem.json", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("receiver"));
}

#[test]
fn malformed_file_names_the_field() {
    let dir = setup(&THRESHOLD.replace("\"lo\": 0.0", "\"lo\": \"zero\""));
    let out = persuade(&["solve", "problem.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(persuade(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(persuade(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn demo_public_private() {
    let dir = tempfile::tempdir().unwrap();
    let out = persuade(&["demo", "public-private", "--n", "2", "--out", "d"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("public optimum"));
    assert!(!table.contains("FAIL"));
    assert!(dir.path().join("d/demo_public_private_2.json").exists());
}
