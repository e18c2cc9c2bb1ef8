use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use octelast::io::{read_f2d, read_vector};
use serde_json::Value;

fn octelast(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_octelast"))
        .args(args)
        .arg("--config")
        .arg(config)
        .env("OCTELAST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

fn small(dir: &Path, extra: &str) -> PathBuf {
    write_config(
        dir,
        &format!(
            r#"{{"schema_version": 1, "grid": {{"nx": 32, "ny": 32, "extent": [1.0, 1.0]}},
               "epsilon": {{"correlation_length": 0.1, "mean": 1.0, "std": 1.0}},
               "output_dir": "{}"{extra}}}"#,
            dir.join("out").display()
        ),
    )
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/manifest.json")).unwrap()).unwrap()
}

#[test]
fn unknown_keys_and_bad_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"schema_version": 1, "sed": 4}"#);
    assert_eq!(octelast(&["phantom"], &cfg).status.code(), Some(2));
    let cfg = write_config(dir.path(), r#"{"schema_version": 7}"#);
    assert_eq!(octelast(&["phantom"], &cfg).status.code(), Some(2));
    let cfg = small(dir.path(), "");
    assert_eq!(octelast(&["phantom", "--grid", "4"], &cfg).status.code(), Some(2));
    assert_eq!(octelast(&["phantom", "--threads", "0"], &cfg).status.code(), Some(2));
    assert_eq!(octelast(&["estimate", "--mms"], &cfg).status.code(), Some(2));
    assert_eq!(octelast(&["frobnicate"], &cfg).status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_5() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(octelast(&["phantom"], &dir.path().join("absent.json")).status.code(), Some(5));
    let cfg = small(dir.path(), "");
    assert_eq!(octelast(&["forward"], &cfg).status.code(), Some(5));
}

#[test]
fn featureless_image_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "");
    ok(&octelast(&["phantom"], &cfg));
    let out = dir.path().join("out");
    fs::copy(out.join("epsilon.f2d"), out.join("epsilon_u.f2d")).unwrap();
    let eps = read_f2d(out.join("epsilon.f2d")).unwrap();
    let flat = octelast::ScalarField2D::constant(*eps.grid(), 1.0);
    octelast::io::write_f2d(out.join("epsilon.f2d"), &flat).unwrap();
    octelast::io::write_f2d(out.join("epsilon_u.f2d"), &flat).unwrap();
    assert_eq!(octelast(&["estimate"], &cfg).status.code(), Some(4));
}

#[test]
fn grid_flag_sets_the_header_and_default_is_300() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "");
    ok(&octelast(&["phantom", "--grid", "64"], &cfg));
    let bytes = fs::read(dir.path().join("out/epsilon.f2d")).unwrap();
    assert!(bytes.starts_with(b"field2d 64 64 0 0 "));

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"schema_version": 1}"#);
    let out = dir.path().join("o");
    ok(&octelast(&["phantom", "--out", out.to_str().unwrap()], &cfg));
    assert!(fs::read(out.join("mu.f2d")).unwrap().starts_with(b"field2d 300 300 0 0 "));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, threads) in [(&a, "1"), (&b, "4")] {
        let cfg = small(dir.path(), "");
        ok(&octelast(&["phantom", "--threads", threads], &cfg));
        ok(&octelast(&["forward", "--threads", threads], &cfg));
        ok(&octelast(&["estimate", "--threads", threads], &cfg));
    }
    assert_eq!(manifest(a.path())["files"], manifest(b.path())["files"]);
    assert!(manifest(a.path())["files"]["u_rec.ux"].is_string());

    let c = tempfile::tempdir().unwrap();
    let cfg = small(c.path(), "");
    ok(&octelast(&["phantom", "--seed", "99"], &cfg));
    assert_ne!(manifest(a.path())["files"]["epsilon.f2d"], manifest(c.path())["files"]["epsilon.f2d"]);
}

#[test]
fn zero_amplitude_gives_zero_displacement() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), r#", "boundary": {"mode": "uniaxial_compression", "amplitude": 0.0}"#);
    ok(&octelast(&["phantom"], &cfg));
    ok(&octelast(&["forward"], &cfg));
    let out = dir.path().join("out");
    let u = read_vector(out.join("u_true")).unwrap();
    assert_eq!(u.max_norm(), 0.0);
    assert_eq!(read_f2d(out.join("epsilon_u.f2d")).unwrap(), read_f2d(out.join("epsilon.f2d")).unwrap());
}

#[test]
fn identical_images_estimate_zero_and_consistent_data_keep_mu0() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), r#", "mu": {"background_mu": 1.0, "inclusions": []}"#);
    ok(&octelast(&["phantom"], &cfg));
    ok(&octelast(&["forward"], &cfg));
    let out = dir.path().join("out");
    // Replace the deformed image by the reference one.
    fs::copy(out.join("epsilon.f2d"), out.join("epsilon_u.f2d")).unwrap();
    fs::remove_file(out.join("mask.pgm")).unwrap();
    ok(&octelast(&["estimate"], &cfg));
    assert_eq!(read_vector(out.join("u_rec")).unwrap().max_norm(), 0.0);
    let cond = read_f2d(out.join("cond.f2d")).unwrap();
    assert!(cond.min() >= 1.0);

    // The true displacement of a homogeneous medium is consistent with mu0 = 1.
    for s in ["ux", "uy"] {
        fs::copy(out.join(format!("u_true.{s}")), out.join(format!("u_rec.{s}"))).unwrap();
    }
    let o = octelast(&["recover"], &cfg);
    ok(&o);
    let rec: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(rec["estimated"]["interior_error"].as_f64().unwrap() < 1e-6);
    let mu = read_f2d(out.join("mu_rec_true.f2d")).unwrap();
    assert!((mu.min() - 1.0).abs() < 1e-6 && (mu.max() - 1.0).abs() < 1e-6);
}

#[test]
fn pipeline_smoke_reports_six_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), r#", "recovery": {"max_iter": 5}"#);
    let o = octelast(&["pipeline", "--threads", "2"], &cfg);
    ok(&o);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("mu_error_pipeline"));
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    let metrics = summary["metrics"].as_object().unwrap();
    assert_eq!(metrics.len(), 6);
    assert!(metrics.values().all(|v| v.as_f64().is_some_and(f64::is_finite)));
    assert!(metrics["divergence_ratio"].as_f64().unwrap() <= 1e-6);
    let m = manifest(dir.path());
    for stage in ["phantom", "forward", "estimate", "recover"] {
        assert!(m["stages"][stage].is_object(), "{stage}");
    }
}

#[test]
fn mms_flag_prints_orders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "");
    let o = octelast(&["forward", "--mms"], &cfg);
    ok(&o);
    let stdout = String::from_utf8_lossy(&o.stdout);
    let orders: Vec<f64> = stdout
        .lines()
        .filter_map(|l| l.split("observed_order=").nth(1))
        .map(|s| s.trim().parse().unwrap())
        .collect();
    assert_eq!(orders.len(), 2);
    assert!(orders.iter().all(|&p| p >= 1.9), "{orders:?}");
    assert!(dir.path().join("out/mms.json").exists());
}
