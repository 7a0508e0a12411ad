#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn config(name: &str) -> PathBuf {
    repo_root().join("configs").join(name)
}

pub fn duc(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_duc"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = duc(args, &[]);
    assert!(out.status.success(), "duc {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn schema_errors(report: &serde_json::Value) -> Vec<String> {
    let schema = read_json(&repo_root().join("schemas/report.schema.json"));
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    validator.iter_errors(report).map(|e| e.to_string()).collect()
}

/// Simulate the standard task into `dir` and return the directory.
pub fn simulate_into(dir: &Path, seed: u64) -> PathBuf {
    let out = dir.join("sim.json");
    run_ok(&[
        "simulate",
        "--config",
        config("simulate.json").to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--out",
        out.to_str().unwrap(),
    ]);
    dir.to_path_buf()
}

pub fn write(path: &Path, text: &str) -> PathBuf {
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}

pub fn rank_config(dir: &Path, candidates: &[&str], extra: &str) -> PathBuf {
    let cands: Vec<String> =
        candidates.iter().map(|c| format!(r#"{{"id": "{c}", "csv": "{c}.csv"}}"#)).collect();
    let text = format!(
        r#"{{
  "inputs": {{
    "target": {{"id": "target", "csv": "target.csv"}},
    "existing": [{{"id": "source2", "csv": "source2.csv"}}],
    "candidates": [{}]
  }},
  "trials": 10{extra}
}}"#,
        cands.join(", ")
    );
    write(&dir.join("rank.json"), &text)
}
