use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn voictl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voictl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn summary(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn bad_lambda_is_a_config_error_naming_the_field() {
    let out = voictl(&["validate", &config("bad_lambda.json")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("lambda"), "{}", stderr(&out));
}

#[test]
fn riccati_first_row_of_the_scalar_instance() {
    let out = voictl(&["riccati", &config("scalar.json")]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| -> f64 {
        let i = header.iter().position(|h| *h == name).unwrap();
        row[i].parse().unwrap()
    };
    assert_eq!(row[0], "0");
    assert!((col("S_r0_c0") - 1.6).abs() < 1e-12);
    assert!((col("L_r0_c0") - 0.6).abs() < 1e-12);
    assert!((col("theta") - 1.0).abs() < 1e-12);
    // k = 0..=N+1
    assert_eq!(text.lines().count(), 1 + 3);
}

#[test]
fn riccati_header_flattens_column_major() {
    let out = voictl(&["riccati", &config("two_sensors.json")]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("k,S_r0_c0,S_r1_c0,S_r0_c1,S_r1_c1,L_r0_c0,L_r0_c1,"));
    assert!(header.ends_with(",theta"));
}

#[test]
fn verify_tiny_passes() {
    let out = voictl(&["verify", &config("tiny.json"), "--episodes", "20000"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = summary(&out);
    assert_eq!(report["passed"], Value::Bool(true));
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.len() >= 5);
    assert!(checks.iter().all(|c| c["status"] == "pass"));
}

#[test]
fn verify_rejects_instances_beyond_the_oracle() {
    let out = voictl(&["verify", &config("standard.json")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("horizon"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(voictl(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(voictl(&["simulate"]).status.code(), Some(64));
    assert_eq!(voictl(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_policy_names_the_field() {
    let out = voictl(&["simulate", &config("scalar.json"), "--policy", "periodic:0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("policy"));
}

#[test]
fn unknown_experiment_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, format!(r#"{{"model": "{}", "epsiodes": 3}}"#, config("scalar.json"))).unwrap();
    let out = voictl(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("epsiodes"));
}

#[test]
fn simulate_echoes_config_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, threads: &str| {
        let out_dir = dir.path().join(sub);
        let out = voictl(&[
            "simulate",
            "--config",
            &config("scalar.json"),
            "--seed",
            "11",
            "--episodes",
            "400",
            "--threads",
            threads,
            "--policy",
            "periodic:2",
            "--out",
            out_dir.to_str().unwrap(),
            "--trace-out",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        (summary(&out), out_dir)
    };
    let (a, dir_a) = run("a", "1");
    let (b, _) = run("b", "3");
    assert_eq!(a["seed"], 11);
    assert_eq!(a["config"]["episodes"], 400);
    assert_eq!(a["config"]["policy"], "periodic:2");
    assert_eq!(a["config"]["model"]["lambda"], 0.5);
    assert!(a["config"]["grid"]["points"].is_number());
    assert_eq!(a["report"], b["report"]);
    assert_eq!(a["report"]["rate"]["mean"], 0.5);

    let traces = std::fs::read_to_string(dir_a.join("traces.csv")).unwrap();
    assert!(traces.starts_with("episode,k,"));
    // stages 0..=N plus the terminal state
    assert_eq!(traces.lines().count(), 1 + 400 * 3);
    let on_disk: Value = serde_json::from_str(&std::fs::read_to_string(dir_a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(on_disk, a);
    assert!(dir_a.join("simulate.csv").exists());
}

#[test]
fn myopic_flag_swaps_the_exact_trigger() {
    let out = voictl(&["simulate", &config("scalar.json"), "--episodes", "10", "--myopic"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(summary(&out)["config"]["policy"], "voi_myopic");
}

#[test]
fn dp_writes_value_and_threshold_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = voictl(&["dp", &config("scalar.json"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let dp = std::fs::read_to_string(dir.path().join("dp.csv")).unwrap();
    assert!(dp.starts_with("stage,e,V,rho,voi,delta\n"));
    assert_eq!(dp.lines().count(), 1 + 2 * 1025);
    let last_stage_transmits = dp
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("1,"))
        .any(|l| l.ends_with(",1"));
    assert!(!last_stage_transmits);
    let thresholds = std::fs::read_to_string(dir.path().join("thresholds.csv")).unwrap();
    assert!(thresholds.lines().nth(2).unwrap().contains("inf"));
    let s = summary(&out);
    assert_eq!(s["thresholds_exact"][1], "inf");
}

#[test]
fn sweep_rows_are_sorted_by_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(
        &path,
        format!(r#"{{"model": "{}", "lambdas": [0.7, 0.2, 0.5], "episodes": 200}}"#, config("scalar.json")),
    )
    .unwrap();
    let out = voictl(&["sweep", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = summary(&out)["rows"].as_array().unwrap().clone();
    let lambdas: Vec<f64> = rows.iter().map(|r| r["lambda"].as_f64().unwrap()).collect();
    assert_eq!(lambdas, vec![0.2, 0.5, 0.7]);
}
