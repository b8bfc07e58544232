use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn aclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aclab")).args(args).output().expect("spawn aclab")
}

fn ok(args: &[&str]) -> String {
    let out = aclab(args);
    assert!(
        out.status.success(),
        "aclab {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "grid": { "low": [-0.5, -0.5], "high": [0.5, 0.5], "points_per_eps": 8.0 },
        "ansatz": { "kind": "flat_interface", "normal": [0.0, 1.0], "offset": 0.0 },
        "eps": [0.1, 0.08],
        "diagnostics": { "reference": { "kind": "plane", "normal": [0.0, 1.0], "offset": 0.0 } },
        "output": dir.join("run"),
        "seed": 5
    });
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn solve_then_certify_diagnose_and_slice() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("solve");
    let out_s = out.to_str().unwrap();

    let summary: Value = serde_json::from_str(&ok(&[
        "solve", "--config", &cfg, "--index", "1", "--output", out_s, "--checkpoint-every", "5",
    ]))
    .unwrap();
    assert_eq!(summary["eps"], 0.08);
    assert!(summary["residual_norm"].as_f64().unwrap() < 1e-9);
    assert!(out.join("solve.json").exists());
    let field = out.join("field.acvf");
    let field = field.to_str().unwrap();

    let cert: Value = serde_json::from_str(&ok(&["certify", "--field", field, "--eps", "0.08"])).unwrap();
    assert_eq!(cert["certified"], true);
    assert!(cert["lambda_min"].as_f64().unwrap() > 0.0);

    let csv = dir.path().join("mono.csv");
    let diag: Value = serde_json::from_str(&ok(&[
        "diagnose", "--field", field, "--config", &cfg, "--index", "1", "--center", "0,0", "--radii", "0.35,0.4",
        "--monotonicity-csv", csv.to_str().unwrap(),
    ]))
    .unwrap();
    assert!(diag["first_variation_sup"].as_f64().unwrap() < 1e-6);
    assert_eq!(diag["monotonicity"].as_array().unwrap().len(), 2);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("x0,r,ratio"));

    let slices = dir.path().join("slices.csv");
    let sl: Value =
        serde_json::from_str(&ok(&["slice", "--field", field, "--csv", slices.to_str().unwrap()])).unwrap();
    let curves = sl["curves"].as_array().unwrap();
    assert_eq!(curves.len(), 1);
    assert!(curves[0]["curvature_integral"].as_f64().unwrap() < 1e-8);
    assert!(slices.exists());
}

#[test]
fn certify_rejects_a_non_critical_field_unless_eigen_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("noflow");
    // Newton capped at zero steps leaves the sampled ansatz as is.
    let failed = aclab(&[
        "solve", "--config", &cfg, "--output", out.to_str().unwrap(), "--no-flow", "--newton-max-iters", "0",
    ]);
    assert!(!failed.status.success());
    let field = out.join("field.acvf");
    let field = field.to_str().unwrap();
    let refused = aclab(&["certify", "--field", field, "--eps", "0.1"]);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("not critical"));
    let eig: Value = serde_json::from_str(&ok(&["certify", "--field", field, "--eps", "0.1", "--eigen-only"])).unwrap();
    assert_eq!(eig["certified"], Value::Null);
}

#[test]
fn sweep_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = dir.path().join("other");
    let printed = ok(&["sweep", "--config", &cfg, "--output", run.to_str().unwrap(), "--no-slicing"]);
    assert_eq!(printed.trim(), run.to_str().unwrap());
    let text = ok(&["report", "--run", run.to_str().unwrap()]);
    assert!(text.contains("stability"), "{text}");
    assert!(run.join("summary.json").exists());
    assert!(!aclab(&["report", "--run", dir.path().join("missing").to_str().unwrap()]).status.success());
}

#[test]
fn bad_arguments_are_reported() {
    let out = aclab(&["certify", "--eps", "0.1"]);
    assert!(!out.status.success());
    let out = aclab(&["slice", "--field", "/nonexistent.acvf"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonexistent"));
}
