use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osc-hawkes")).args(args).output().expect("binary runs")
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn listed_outputs_exist(dir: &Path) {
    let m = json(&dir.join("manifest.json"));
    for f in m["outputs"].as_array().unwrap() {
        assert!(dir.join(f.as_str().unwrap()).exists(), "{f} missing");
    }
}

#[test]
fn limit_analysis_reports_equilibrium_roots_and_orbit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bench.json");
    fs::write(&cfg, r#"{"n1": 1, "n2": 1, "f1": {"fmin": 0.05}}"#).unwrap();
    let out = tmp.path().join("runs/a");
    let o = bin(&["limit-analysis", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&out.join("limit.json"));
    let eq = &v["equilibrium"];
    assert!((eq["rho"].as_f64().unwrap() + 16.0).abs() < 1e-9);
    assert_eq!(eq["roots"].as_array().unwrap().len(), 4);
    assert_eq!(eq["assumption4"], Value::Bool(true));
    let orbits = v["orbits"].as_array().unwrap();
    assert_eq!(orbits.len(), 1);
    assert!((orbits[0]["period"].as_f64().unwrap() - 6.19).abs() < 0.01);
    let x: Vec<f64> = eq["point"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    for (a, b) in x.iter().zip([0.3, 0.3, -0.3, -0.3]) {
        assert!((a - b).abs() < 1e-12);
    }
    listed_outputs_exist(&out);
    assert_eq!(json(&out.join("manifest.json"))["subcommand"], "limit-analysis");
}

#[test]
fn fw_weights_two_classes_is_the_off_diagonal_swap() {
    let tmp = tempfile::tempdir().unwrap();
    let costs = tmp.path().join("costs.json");
    fs::write(&costs, r#"{"entries": [[0, 0.37], [1.25, 0]], "labels": ["x*", "orbit 1"]}"#).unwrap();
    let out = tmp.path().join("w");
    let o = bin(&["fw-weights", "--costs", costs.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let w = json(&out.join("weights.json"));
    assert_eq!(w["w"], serde_json::json!([1.25, 0.37]));
    assert_eq!(w["argmin_class"], 1);
}

#[test]
fn simulate_sde_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = bin(&["simulate-sde", "--N", "100", "--seed", "7", "--horizon", "5", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        (fs::read(out.join("path.csv")).unwrap(), json(&out.join("manifest.json"))["input_hash"].clone())
    };
    let (a, ha) = run("a");
    let (b, hb) = run("b");
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    let out = tmp.path().join("c");
    bin(&["simulate-sde", "--N", "100", "--seed", "8", "--horizon", "5", "--out", out.to_str().unwrap()]);
    assert_ne!(fs::read(out.join("path.csv")).unwrap(), a);
}

#[test]
fn simulate_hawkes_writes_events_and_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("h");
    let o = bin(&["simulate-hawkes", "--N", "10", "--horizon", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let events = fs::read_to_string(out.join("events.csv")).unwrap();
    assert!(events.starts_with("population,time"));
    let path = fs::read_to_string(out.join("path.csv")).unwrap();
    assert_eq!(path.lines().count(), 1 + 201);
    listed_outputs_exist(&out);
}

#[test]
fn odd_population_does_not_split() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin(&["simulate-hawkes", "--N", "11", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn validation_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(bin(&["bogus"]).status.code(), Some(1));
    assert_eq!(bin(&["limit-analysis", "--wat"]).status.code(), Some(1));
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "n1 = x\n").unwrap();
    let out = tmp.path().join("o");
    assert_eq!(bin(&["limit-analysis", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(1));
    fs::write(&cfg, "p1 = 0.7\n").unwrap();
    assert_eq!(bin(&["limit-analysis", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(1));
    let file = tmp.path().join("file");
    fs::write(&file, "").unwrap();
    assert_eq!(bin(&["limit-analysis", "--out", file.join("sub").to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(bin(&["limit-analysis", "--jobs", "0"]).status.code(), Some(1));
}

#[test]
fn coarse_steering_is_a_numerical_failure_with_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = bin(&["steer", "--dt", "0.5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(out.join("manifest.json").exists());
    let r = json(&out.join("steer.json"));
    assert!(r["residual"].as_f64().unwrap() > 1e-4);
}

#[test]
fn steering_between_given_states() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = bin(&["steer", "--from", "0.1,0.2,-0.1,0", "--to", "-0.2,0.1,0.3,0.1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("steer.json"));
    assert!(r["residual"].as_f64().unwrap() < 1e-8);
    listed_outputs_exist(&out);
}

#[test]
fn wrong_state_dimension_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin(&["steer", "--from", "0.1,0.2", "--to", "0,0,0,0", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn refine_is_accepted_everywhere() {
    for cmd in [
        "simulate-hawkes",
        "simulate-sde",
        "limit-analysis",
        "steer",
        "certify-stlc",
        "quasipotential",
        "class-costs",
        "fw-weights",
        "exit-times",
        "occupation",
        "weak-error",
    ] {
        let o = bin(&[cmd, "--refine", "--help"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}");
    }
}

#[test]
fn certify_stlc_reports_every_phase() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    let o = bin(&["certify-stlc", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("stlc.json"));
    let phases = r["phases"].as_array().unwrap();
    assert_eq!(phases.len(), 4);
    assert!(phases.iter().all(|p| p["min_singular_value"].as_f64().unwrap() > 0.0));
}

#[test]
fn small_exit_study_writes_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("e");
    let o = bin(&["exit-times", "--ns", "50,100,200", "--replicas", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&out.join("study.json"));
    assert_eq!(s["records"].as_array().unwrap().len(), 3);
    let rows = fs::read_to_string(out.join("rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 30);
}

#[test]
fn jobs_do_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |jobs: &str| {
        let out = tmp.path().join(jobs);
        let o = bin(&["exit-times", "--ns", "50,100,200", "--replicas", "12", "--jobs", jobs, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("rows.csv")).unwrap()
    };
    assert_eq!(run("1"), run("3"));
}
