use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;
use tempfile::TempDir;

fn freezekit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_freezekit"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = freezekit(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn error_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(line.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {line}"))
}

#[test]
fn zero_sessions_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let err = error_json(&freezekit(dir.path(), &["simulate", "--preset", "high_e1", "--n", "0"]));
    assert_eq!(err["code"], "invalid_config");
    assert_eq!(err["details"]["fields"][0]["field"], "n");
}

#[test]
fn unknown_agent_preset_lists_names() {
    let dir = TempDir::new().unwrap();
    let err = error_json(&freezekit(dir.path(), &["simulate", "--preset", "hgh_e1", "--n", "3"]));
    assert_eq!(err["code"], "unknown_preset");
    assert!(err["details"]["presets"].as_array().unwrap().iter().any(|p| p == "high_e1"));
}

#[test]
fn malformed_input_reports_the_line() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["simulate", "--preset", "high_e1", "--n", "2", "--out", "runs.jsonl"]);
    let mut text = std::fs::read_to_string(dir.path().join("runs.jsonl")).unwrap();
    let n = text.lines().count();
    text.push_str("{not json}\n");
    std::fs::write(dir.path().join("bad.jsonl"), text).unwrap();
    let err = error_json(&freezekit(dir.path(), &["analyze", "--in", "bad.jsonl"]));
    assert_eq!(err["code"], "parse_error");
    assert_eq!(err["details"]["line"], n + 1);
}

#[test]
fn analyze_is_byte_deterministic() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--preset", "normal_e1", "--n", "20", "--seed", "3", "--out", "runs.jsonl"]);
    ok(d, &["analyze", "--in", "runs.jsonl", "--delta", "2", "--out", "a.json"]);
    ok(d, &["analyze", "--in", "runs.jsonl", "--delta", "2", "--out", "b.json"]);
    let a = std::fs::read(d.join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.json")).unwrap());
    assert_eq!(ok(d, &["report", "--in", "a.json", "--format", "json"]), a);
    let csv = String::from_utf8(ok(d, &["report", "--in", "a.json", "--format", "csv"])).unwrap();
    assert!(csv.starts_with("metric,group,condition,key,value,n,lower,upper"));
    let text = String::from_utf8(ok(d, &["report", "--in", "a.json", "--format", "text"])).unwrap();
    assert!(text.contains("[normal / implicit]"));
}

#[test]
fn pipeline_on_presets_within_budget() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let start = Instant::now();
    ok(d, &["simulate", "--preset", "high_e1", "--n", "100", "--seed", "7", "--out", "high.jsonl"]);
    ok(d, &["simulate", "--preset", "normal_e1", "--n", "100", "--seed", "8", "--out", "normal.jsonl"]);
    let mut runs = std::fs::read(d.join("high.jsonl")).unwrap();
    runs.extend(std::fs::read(d.join("normal.jsonl")).unwrap());
    std::fs::write(d.join("runs.jsonl"), runs).unwrap();
    ok(d, &["analyze", "--in", "runs.jsonl", "--out", "report.json"]);
    ok(d, &["fit", "--in", "runs.jsonl", "--out", "fits.csv"]);
    let ladder = String::from_utf8(ok(d, &["ladder", "--in", "runs.jsonl"])).unwrap();
    assert!(start.elapsed().as_secs() < 300);

    let fits = std::fs::read_to_string(d.join("fits.csv")).unwrap();
    assert_eq!(fits.lines().count(), 201);
    assert!(fits.starts_with("session_id,group,condition,alpha,beta,phi,"));
    for m in ["M1", "M2", "M3", "M4", "M5"] {
        assert!(ladder.contains(m), "{ladder}");
    }
    let json: Value = serde_json::from_slice(&ok(d, &["ladder", "--in", "runs.jsonl", "--format", "json"])).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn recover_writes_a_report() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["recover", "--n", "20", "--trials", "60", "--seed", "2"]);
    let v: Value = serde_json::from_slice(&out).unwrap();
    assert_eq!(v["n_agents"], 20);
    assert_eq!(v["truth"]["alpha"].as_array().unwrap().len(), 20);
    let err = error_json(&freezekit(dir.path(), &["recover", "--n", "5"]));
    assert_eq!(err["code"], "invalid_input");
}
