use std::fs;
use std::path::Path;
use std::process::Command;

use dynlab::cli::{run, EXIT_DATA, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE};
use dynlab::effects::EffectReport;
use dynlab::estimator::FitResult;
use serde_json::Value;

fn dynlab(args: &[&str]) -> i32 {
    let mut argv = vec!["dynlab", "-q"];
    argv.extend_from_slice(args);
    run(argv)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, persons: usize, seed: u64) -> std::path::PathBuf {
    simulate_with(dir, persons, seed, "")
}

fn simulate_with(dir: &Path, persons: usize, seed: u64, extra: &str) -> std::path::PathBuf {
    let cfg = dir.join("dgp.json");
    fs::write(&cfg, format!(r#"{{"persons": {persons}, "waves": 5{extra}}}"#)).unwrap();
    let out = dir.join(format!("sim{seed}"));
    assert_eq!(dynlab(&["simulate", "--config", p(&cfg), "--seed", &seed.to_string(), "--out", p(&out)]), EXIT_OK);
    out
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn missing_panel_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dynlab")).args(["fit", "--out", p(dir.path())]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--panel"));
    assert_eq!(dynlab(&["fit", "--panel", "/definitely/not/here.csv", "--out", p(dir.path())]), EXIT_USAGE);
    assert_eq!(dynlab(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(dynlab(&["--threads", "0", "simulate", "--out", p(dir.path())]), EXIT_USAGE);
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), 50, 4);
    let b = dir.path().join("again");
    let cfg = dir.path().join("dgp.json");
    assert_eq!(dynlab(&["--threads", "2", "simulate", "--config", p(&cfg), "--seed", "4", "--out", p(&b)]), EXIT_OK);
    assert_eq!(fs::read(a.join("panel.csv")).unwrap(), fs::read(b.join("panel.csv")).unwrap());
    assert_eq!(manifest(&a)["outputs"], manifest(&b)["outputs"]);
    assert_eq!(manifest(&a)["config"]["seed"], 4);
}

#[test]
fn invalid_configs_rejected_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"persons": 10, "wavez": 3}"#).unwrap();
    let out = dir.path().join("o");
    assert_eq!(dynlab(&["simulate", "--config", p(&cfg), "--out", p(&out)]), EXIT_USAGE);
    assert!(!out.exists());
    fs::write(&cfg, r#"{"persons": 0}"#).unwrap();
    assert_eq!(dynlab(&["simulate", "--config", p(&cfg), "--out", p(&out)]), EXIT_USAGE);
}

#[test]
fn malformed_panel_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    fs::write(&panel, "person_id,year\n1,abc\n").unwrap();
    assert_eq!(dynlab(&["describe", "--panel", p(&panel), "--out", p(&dir.path().join("d"))]), EXIT_DATA);
}

#[test]
fn exhausted_iterations_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), 150, 8);
    let out = dir.path().join("fit");
    let code = dynlab(&["fit", "--panel", p(&sim.join("panel.csv")), "--mode", "pooled", "--max-iter", "1", "--out", p(&out)]);
    assert_eq!(code, EXIT_NOT_CONVERGED);
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), 300, 3);
    let panel = sim.join("panel.csv");
    let fit_dir = dir.path().join("fit");
    assert_eq!(dynlab(&["fit", "--panel", p(&panel), "--mode", "wrs", "--out", p(&fit_dir)]), EXIT_OK);
    let fit: FitResult = serde_json::from_str(&fs::read_to_string(fit_dir.join("fit.json")).unwrap()).unwrap();
    let k = fit.estimates.len();
    assert_eq!(fit.names.len(), k);
    assert_eq!(fit.std_errors.len(), k);
    assert_eq!(fit.covariance.len(), k * k);
    assert!(fit.log_likelihood.is_finite() && fit.diagnostics.converged);
    assert!(fit.diagnostics.gradient_norm <= 1e-6);
    assert!(fs::read_to_string(fit_dir.join("rrr.txt")).unwrap().contains("lag:I*cma_index"));

    let m = manifest(&fit_dir);
    assert_eq!(m["inputs"][0]["path"], p(&panel));
    let hash = &m["inputs"][0]["sha256"];
    assert_eq!(hash.as_str().unwrap().len(), 64);

    let eff = dir.path().join("effects");
    let code = dynlab(&["effects", "--panel", p(&panel), "--fit", p(&fit_dir.join("fit.json")), "--grid=-1:1:3", "--out", p(&eff)]);
    assert_eq!(code, EXIT_OK);
    let rep: EffectReport = serde_json::from_str(&fs::read_to_string(eff.join("ame.json")).unwrap()).unwrap();
    assert_eq!(rep.cells.len(), 12);
    assert_eq!(fs::read_to_string(eff.join("grid.csv")).unwrap().lines().count(), 4);

    let scen = dir.path().join("scenarios.json");
    fs::write(
        &scen,
        r#"[{"name": "more access", "edits": [{"column": "cma_index", "before": -1.0, "after": 1.0}]},
            {"name": "urban only", "edits": [{"column": "cma_index", "before": 0.0, "after": 0.5}],
             "evaluation": {"rule": "subset_means", "filters": [{"column": "urban", "op": "==", "value": 1.0}]}}]"#,
    )
    .unwrap();
    let pol = dir.path().join("policy");
    let code = dynlab(&["policy", "--panel", p(&panel), "--fit", p(&fit_dir.join("fit.json")), "--config", p(&scen), "--out", p(&pol)]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(fs::read_to_string(pol.join("policy.csv")).unwrap().lines().count(), 7);
    fs::write(&scen, r#"{"name": "x", "edits": [{"column": "no_such_column", "before": 0.0, "after": 1.0}]}"#).unwrap();
    let code = dynlab(&["policy", "--panel", p(&panel), "--fit", p(&fit_dir.join("fit.json")), "--config", p(&scen), "--out", p(&pol)]);
    assert_eq!(code, EXIT_USAGE);

    // re-running the recorded arguments reproduces every output bitwise
    let args: Vec<String> = m["args"].as_array().unwrap().iter().map(|a| a.as_str().unwrap().to_string()).collect();
    let mut argv = vec!["dynlab".to_string()];
    argv.extend(args);
    assert_eq!(run(argv), EXIT_OK);
    assert_eq!(manifest(&fit_dir)["outputs"], m["outputs"]);
}

#[test]
fn descriptive_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_with(dir.path(), 200, 6, r#", "loans": {}, "household_size": 2"#);
    let panel = sim.join("panel.csv");
    let d = dir.path().join("describe");
    assert_eq!(dynlab(&["describe", "--panel", p(&panel), "--out", p(&d)]), EXIT_OK);
    let csv = fs::read_to_string(d.join("transitions.csv")).unwrap();
    assert!(csv.contains("borrower") && csv.contains("all"));
    assert_eq!(dynlab(&["describe", "--panel", p(&panel), "--variables", "age,nonsense", "--out", p(&d)]), EXIT_USAGE);
    let e = dir.path().join("events");
    let code = dynlab(&["event-study", "--panel", p(&panel), "--window", "3", "--out", p(&e)]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(fs::read_to_string(e.join("event_study.csv")).unwrap().lines().count(), 15);
    let i = dir.path().join("index");
    assert_eq!(dynlab(&["index", "--panel", p(&panel), "--method", "pca", "--out", p(&i)]), EXIT_OK);
    let idx = fs::read_to_string(i.join("cma_index.csv")).unwrap();
    assert!(idx.starts_with("community_id,year,index,method"));
    assert!(i.join("panel_indexed.csv").exists());
}
