use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use knnrag::memory::{MemoryStore, Norm};

fn knnrag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_knnrag")).args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Four points around the origin, all with label 1.
fn unanimous_store(dir: &Path) -> String {
    let file = dir.join("mem.knn");
    let store = MemoryStore::new(2, 2, Norm::L2, vec![0.0, 0.1, 0.1, 0.0, -0.1, 0.0, 0.0, -0.1], vec![0; 4]).unwrap();
    store.save(&file).unwrap();
    path(&file).to_string()
}

const ONE_CELL: &str = r#"
schema_version = 1
master_seed = 3

[[sweep]]
experiment = "trust_limit"
n_grid = [300]
k = [10]
reps = 4
queries = [[1.5, 0.0]]

[sweep.scenario]
dim = 2
num_labels = 2
input_law = { kind = "uniform_ball", radius = 1.0 }
conditional = { weights = [[1.0, 0.0], [-1.0, 0.0]] }
"#;

#[test]
fn gate_rejects_k_above_n() {
    let dir = tempfile::tempdir().unwrap();
    let mem = unanimous_store(dir.path());
    let out = knnrag(&["gate", "--memory", &mem, "--query", "0,0", "--p-true", "0.5,0.5", "--q0", "0.5,0.5", "--k", "9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("k = 9 must satisfy 1 <= k <= n = 4"), "{}", stderr(&out));
}

#[test]
fn gate_switches_when_retriever_fits_better() {
    let dir = tempfile::tempdir().unwrap();
    let mem = unanimous_store(dir.path());
    let args = ["gate", "--memory", &mem, "--query=-0.01,0", "--p-true", "1,0", "--q0", "0.5,0.5", "--k", "4", "--zeta", "0"];
    let out = knnrag(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["lambda"], 1.0);
    assert_eq!(json["regime"], "A");
    assert_eq!(json["y_r"], 1);
    assert_eq!(json["ellr"], 0.0);
    // delta_h = w (rhat[1] - q0[1]) = w (1 - 0.5).
    let w = json["w_fact"].as_f64().unwrap();
    assert!((json["delta_h"].as_f64().unwrap() - 0.5 * w).abs() < 1e-15);

    let again = knnrag(&args);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn gate_soft_mode_reports_interior_weight() {
    let dir = tempfile::tempdir().unwrap();
    let mem = unanimous_store(dir.path());
    // p = (0.7, 0.3): the unconstrained optimum mixes q0 = (0.2, 0.8) and rhat = (1, 0).
    let out = knnrag(&["gate", "--memory", &mem, "--query", "0,0", "--p-true", "0.7,0.3", "--q0", "0.2,0.8", "--k", "4", "--mode", "soft"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["mode"], "soft");
    // Zero penalty: mixed[0] = 0.7 at the optimum, so lambda = (0.7 - 0.2) / 0.8.
    assert!((json["lambda"].as_f64().unwrap() - 0.625).abs() < 1e-9);
}

#[test]
fn gate_needs_a_truth_source() {
    let dir = tempfile::tempdir().unwrap();
    let mem = unanimous_store(dir.path());
    let out = knnrag(&["gate", "--memory", &mem, "--query", "0,0", "--q0", "0.5,0.5", "--k", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--p-true"));
}

#[test]
fn simulate_one_cell_writes_one_row_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("one.toml");
    fs::write(&config, ONE_CELL).unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));

    let out = knnrag(&["simulate", "--config", path(&config), "--out", path(&a)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(a.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("sweep,experiment,n,k,query,reps,target,"));
    assert!(a.join("report.json").exists());

    let out = knnrag(&["simulate", "--config", path(&config), "--out", path(&b), "--threads", "3"]);
    assert!(out.status.success());
    assert_eq!(csv, fs::read_to_string(b.join("report.csv")).unwrap());

    // The manifest alone reproduces the run.
    let out = knnrag(&["simulate", "--config", path(&a.join("manifest.json")), "--out", path(&c), "--threads", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(csv, fs::read_to_string(c.join("report.csv")).unwrap());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["master_seed"], 3);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn simulate_seed_override_and_format() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("one.toml");
    fs::write(&config, ONE_CELL).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(knnrag(&["simulate", "--config", path(&config), "--out", path(&a)]).status.success());
    let out = knnrag(&["simulate", "--config", path(&config), "--out", path(&b), "--seed", "4", "--format", "csv"]);
    assert!(out.status.success());
    assert!(!b.join("report.json").exists());
    assert_ne!(fs::read(a.join("report.csv")).unwrap(), fs::read(b.join("report.csv")).unwrap());
}

#[test]
fn simulate_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");

    fs::write(&config, ONE_CELL.replace("experiment = \"trust_limit\"\n", "")).unwrap();
    let out = knnrag(&["simulate", "--config", path(&config), "--out", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("experiment"), "{}", stderr(&out));

    fs::write(&config, ONE_CELL.replace("reps = 4", "reps = = 4")).unwrap();
    let out = knnrag(&["simulate", "--config", path(&config), "--out", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 9"), "{}", stderr(&out));
}

#[test]
fn plot_draws_targets_and_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("one.toml");
    fs::write(&config, ONE_CELL).unwrap();
    let run = dir.path().join("run");
    assert!(knnrag(&["simulate", "--config", path(&config), "--out", path(&run)]).status.success());
    let report = run.join("report.csv");
    let svg = dir.path().join("w.svg");

    let out = knnrag(&["plot", "--report", path(&report), "--out", path(&svg)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg"));
    assert_eq!(text.matches("<circle").count(), 1);
    assert_eq!(text.matches("class=\"target\"").count(), 1);

    let out = knnrag(&["plot", "--report", path(&report), "--out", path(&svg), "--metric", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown metric"));

    let header_only = dir.path().join("empty.csv");
    let first_line = fs::read_to_string(&report).unwrap().lines().next().unwrap().to_string();
    fs::write(&header_only, first_line + "\n").unwrap();
    let out = knnrag(&["plot", "--report", path(&header_only), "--out", path(&svg)]);
    assert_ne!(out.status.code(), Some(0));
}
