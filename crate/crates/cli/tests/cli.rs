use std::fs;
use std::path::Path;
use std::process::Command;

use rmtlab::config::{ExperimentConfig, ExperimentKind, FlowConfig};
use rmtlab::run_with_threads;
use rmtlab_core::ensembles::EnsembleSpec;

fn rmtlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rmtlab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

fn data_rows(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn goe_spectrum_has_n_ascending_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"ensemble": {"n": 500, "kind": "goe"}}"#);
    let out = dir.path().join("run");
    let o = rmtlab(&["spectrum", "--config", &cfg, "--seed", "42", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("spectrum.csv")).unwrap();
    assert!(text.starts_with("# rmtlab config_hash="));
    assert!(text.lines().nth(1).unwrap() == "index,eigenvalue");
    let values: Vec<f64> = data_rows(&text)
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 500);
    assert!(values.windows(2).all(|w| w[0] <= w[1]));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 42);
    assert_eq!(report["header"]["seed"], 42);
    assert!(report["config"].get("threads").is_none());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"ensemble": {"n": 120, "kind": "erdos_renyi", "q_exponent": 0.4}, "trials": 4}"#,
    );
    for (sub, threads) in [("a", "1"), ("b", "3")] {
        let out = dir.path().join(sub);
        let o = rmtlab(&["gaps", "--config", &cfg, "--seed", "9", "--threads", threads, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["gaps.csv", "gap_histogram.csv", "reference_gap_histogram.csv", "report.json"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn invalid_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"ensemble": {"n": 100, "kind": "erdos_renyi", "q_exponent": 0.6}, "trials": 0}"#,
    );
    let o = rmtlab(&["spectrum", "--config", &cfg, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("trials") && err.contains("ensemble:"), "{err}");
}

#[test]
fn mismatched_experiment_kind_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"experiment": "gaps"}"#);
    let o = rmtlab(&["spectrum", "--config", &cfg, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn histogram_rows_cover_the_samples() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::Spectrum, EnsembleSpec::goe(200));
    cfg.trials = 3;
    cfg.stats.bins = 25;
    cfg.out = Some(dir.path().to_path_buf());
    let report = run_with_threads(&cfg).unwrap();
    assert!(report.metric("ks_semicircle").unwrap().value < 0.05);
    let text = fs::read_to_string(dir.path().join("spectrum_histogram.csv")).unwrap();
    assert_eq!(text.lines().nth(1).unwrap(), "bin_left,bin_right,count,density");
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 25);
    let total: u64 = rows.iter().map(|r| r.split(',').nth(2).unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 600);
}

#[test]
fn free_conv_run_writes_density_and_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::FreeConv, EnsembleSpec::erdos_renyi(200, 0.4));
    cfg.flow = Some(FlowConfig {
        t: 0.2,
        profile: None,
        mean_f: None,
        decompose: false,
    });
    cfg.out = Some(dir.path().to_path_buf());
    let report = run_with_threads(&cfg).unwrap();
    assert!((report.metric("density_mass").unwrap().value - 1.0).abs() < 1e-2);
    let mid = report.metric("gamma_t_100").unwrap().value;
    assert!(mid.abs() < 0.1, "{mid}");
    for name in ["density.csv", "deviation.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let dev = fs::read_to_string(dir.path().join("deviation.csv")).unwrap();
    assert_eq!(dev.lines().nth(1).unwrap(), "E,eta,dev_m,dev_rho");
}

#[test]
fn flow_compare_is_zero_at_time_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::FlowCompare, EnsembleSpec::erdos_renyi(60, 0.4));
    cfg.trials = 10;
    cfg.flow = Some(FlowConfig {
        t: 0.0,
        profile: None,
        mean_f: None,
        decompose: false,
    });
    cfg.out = Some(dir.path().to_path_buf());
    let report = run_with_threads(&cfg).unwrap();
    assert_eq!(report.metric("diff").unwrap().value, 0.0);
    let c: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("comparison.json")).unwrap()).unwrap();
    assert_eq!(c["diff"], 0.0);
    assert!(c["header"]["config_hash"].is_string());
}
