use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn system(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "systems", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypoheat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(args: &[&str]) -> (Value, i32) {
    let out = run(args);
    let text = String::from_utf8(out.stdout).unwrap();
    let v = serde_json::from_str(&text).unwrap_or_else(|e| panic!("{e}: {text}"));
    (v, out.status.code().unwrap())
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

#[test]
fn analyze_double_integrator() {
    let di = system("double_integrator.json");
    let (v, code) = json(&["analyze", &di, "--point", "0,0", "--point", "1,0", "--format", "json"]);
    assert_eq!(code, 0);
    assert_eq!(v["filtration"]["exponent"], 4);
    assert_eq!(v["filtration"]["increments"], serde_json::json!([1, 1]));
    assert!((f(&v["c0"]) - 1.0 / 12.0).abs() < 1e-14);
    assert!((f(&v["curvature"]["leading"][0][0]) - 4.0).abs() < 1e-12);
    assert!(v["coefficients"]["a"].as_array().unwrap().iter().all(|a| f(a) == 0.0));
    assert_eq!(v["points"][0]["regime"], "equilibrium");
    assert_eq!(v["points"][1]["regime"], "level 2");
    assert!((f(&v["points"][1]["rate"]) - 6.0).abs() < 1e-6);
    assert_eq!(v["passed"], true);
    for check in v["verifications"].as_array().unwrap() {
        assert!(check["residual"].is_number() && check["tolerance"].is_number());
        assert_eq!(check["passed"], true, "{check}");
    }
}

#[test]
fn json_report_round_trips_byte_identically() {
    let out = run(&[
        "analyze",
        &system("damped_oscillator.json"),
        "--point",
        "1,1",
        "--point",
        "0.4,0",
        "--format",
        "json",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let parsed: Value = serde_json::from_str(&text).unwrap();
    let again = serde_json::to_string_pretty(&parsed).unwrap() + "\n";
    assert_eq!(again, text);
}

#[test]
fn uncontrollable_system_is_an_input_error() {
    let out = run(&["analyze", &system("uncontrollable.json")]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("Kalman") && err.contains("= 1 < n = 2"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    let di = system("double_integrator.json");
    for args in [
        vec!["analyze", di.as_str(), "--tol", "nonsense=1"],
        vec!["analyze", di.as_str(), "--tol", "a1"],
        vec!["analyze", "/nonexistent/system.json"],
        vec!["analyze", di.as_str(), "--point", "1,2,3"],
        vec!["kernel", di.as_str(), "--t", "1", "--x", "0,zero", "--y", "0,0"],
        vec!["frobnicate"],
    ] {
        assert_eq!(run(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn kernel_values() {
    let di = system("double_integrator.json");
    let (v, code) = json(&["kernel", &di, "--t", "1", "--x", "0,0", "--y", "0,0", "--format", "json"]);
    assert_eq!(code, 0);
    assert!((f(&v["density"]) - 3f64.sqrt() / std::f64::consts::PI).abs() < 1e-12);
    assert!((f(&v["det_covariance"]) - 1.0 / 12.0).abs() < 1e-14);

    let (t, x, y): (f64, [f64; 2], [f64; 2]) = (0.7, [0.1, -0.3], [0.4, 0.2]);
    let (v, _) = json(&[
        "kernel",
        &system("elliptic2.json"),
        "--t",
        "0.7",
        "--x",
        "0.1,-0.3",
        "--y",
        "0.4,0.2",
        "--format",
        "json",
    ]);
    let d2 = (y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2);
    let want = (-d2 / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t);
    assert!((f(&v["density"]) - want).abs() < 1e-14);
    assert!((f(&v["action"]) - d2 / (2.0 * t)).abs() < 1e-14);

    let out = run(&["kernel", &di, "--t", "0", "--x", "0,0", "--y", "0,0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("strictly positive"));
}

#[test]
fn cost_of_double_integrator() {
    let (v, code) = json(&[
        "cost",
        &system("double_integrator.json"),
        "--t",
        "1",
        "--x1",
        "0,0",
        "--x2",
        "0,1",
        "--format",
        "json",
    ]);
    assert_eq!(code, 0);
    assert!((f(&v["value"]) - 6.0).abs() < 1e-10);
    assert!(f(&v["relative_discrepancy"]) < 1e-10);
}

#[test]
fn curvature_with_oracle() {
    let (v, code) = json(&["curvature", &system("chain3.json"), "--oracle", "--format", "json"]);
    assert_eq!(code, 0);
    assert!((f(&v["curvature"]["trace_leading"]) - 9.0).abs() < 1e-9);
    assert_eq!(v["passed"], true);
}

fn sweep_rows(name: &str, point: &str, t_min: &str, t_max: &str, n: &str) -> Vec<Vec<f64>> {
    let out = run(&[
        "sweep", &system(name), "--point", point, "--t-min", t_min, "--t-max", t_max, "--n-points", n,
    ]);
    assert_eq!(out.status.code(), Some(0));
    let mut reader = csv::Reader::from_reader(out.stdout.as_slice());
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["t", "p_exact", "p_asym", "normalized_residual", "action"]
    );
    reader
        .records()
        .map(|r| r.unwrap().iter().map(|s| s.parse().unwrap()).collect())
        .collect()
}

#[test]
fn sweep_residuals() {
    let rows = sweep_rows("double_integrator.json", "0,0", "1e-3", "1e-1", "20");
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r[3].abs() < 1e-13));

    // roundoff floor sits near 1e-16; stay well above it
    let rows = sweep_rows("ou.json", "0", "0.02", "0.2", "8");
    let (first, last) = (&rows[0], &rows[rows.len() - 1]);
    let slope = (last[3].abs() / first[3].abs()).ln() / (last[0] / first[0]).ln();
    assert!(slope >= 4.9, "slope {slope}");

    let out = run(&["sweep", &system("ou.json"), "--point", "0", "--n-points", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_passes_and_fails_on_tolerance() {
    let dir = std::env::temp_dir().join(format!("hypoheat-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let samples = dir.join("samples.csv");
    let ou = system("ou.json");
    let (v, code) = json(&[
        "simulate",
        &ou,
        "--point",
        "0.5",
        "--paths",
        "20000",
        "--dt",
        "0.05",
        "--samples",
        samples.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(code, 0);
    assert_eq!(v["report"]["n_samples"], 20000);
    let csv_text = std::fs::read_to_string(&samples).unwrap();
    assert_eq!(csv_text.lines().next(), Some("x1"));
    assert_eq!(csv_text.lines().count(), 20001);

    let out = run(&["simulate", &ou, "--point", "0.5", "--paths", "20000", "--tol", "z_limit=1e-6"]);
    assert_eq!(out.status.code(), Some(1));
    std::fs::remove_dir_all(dir).unwrap();
}
