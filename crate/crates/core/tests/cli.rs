use std::fs;
use std::process::{Command, Output};

use orthoplane::pipeline::{RunManifest, Stage};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orthoplane")).args(args).output().unwrap()
}

#[test]
fn missing_input_fails_with_stage_tag() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--out", dir.path().to_str().unwrap(), "distill"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[distill]"));
}

#[test]
fn bad_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"planes": {"n_vertical": 49, "n_gorund": 14}}"#).unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "planes"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[planes]") && err.contains("planes.n_gorund"), "{err}");
}

#[test]
fn planes_and_report_write_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(run(&["--out", d, "--seed", "4", "planes"]).status.success());
    let bank: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("planes.json")).unwrap()).unwrap();
    assert_eq!(bank["planes"].as_array().unwrap().len(), 63);

    let metrics = dir.path().join("m.json");
    fs::write(
        &metrics,
        r#"{"name": "a", "pred_invalid": 0, "metrics": {"abs_rel": 0.1, "sq_rel": 0.2, "rmse": 3.0,
            "rmse_log": 0.15, "a1": 0.9, "a2": 0.95, "a3": 0.99, "count": 10}}"#,
    )
    .unwrap();
    assert!(run(&["--out", d, "report", metrics.to_str().unwrap()]).status.success());
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "name,abs_rel,sq_rel,rmse,rmse_log,a1,a2,a3,count");
    assert!(csv.lines().nth(1).unwrap().starts_with("a,0.100000,0.200000,3.000000"));

    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.stages.iter().map(|s| s.stage).collect::<Vec<_>>(), [Stage::Planes, Stage::Report]);
    assert_eq!(manifest.stages[0].seed, 4);
    assert_eq!(manifest.config_hash.len(), 64);
}
