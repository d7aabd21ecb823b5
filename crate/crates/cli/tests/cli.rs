use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nargof(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nargof")).args(args).output().expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small Monte Carlo config so the CLI tests stay fast.
fn small_mc_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        "[model]\nname = \"linear_ar\"\ntheta = [0.5]\n\n[errors]\nmarginal = \"std_normal\"\n\n\
         [experiment]\nn_grid = [300, 600]\nreplications = 40\nmaster_seed = 11\n",
    )
    .unwrap();
    path
}

#[test]
fn constants_prints_exact_epanechnikov_values() {
    let out = nargof(&["constants", "epanechnikov"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["kernel"], "epanechnikov");
    assert_eq!(v["r_k"].as_f64().unwrap(), 0.6);
    assert!((v["sigma2_k"].as_f64().unwrap() - 0.2).abs() < 1e-15);
}

#[test]
fn unknown_kernel_is_a_config_error() {
    let out = nargof(&["constants", "gaussian"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn inadmissible_bandwidth_exponent_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("default.toml");
    let out = nargof(&["test", "--config", arg(&cfg), "--out", arg(dir.path()), "--set", "bandwidth.gamma=0.6"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("default.toml");
    let out = nargof(&["test", "--config", arg(&cfg), "--out", arg(dir.path()), "--set", "test.lvl=0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn test_command_is_deterministic_and_writes_manifest() {
    let cfg = configs().join("default.toml");
    let mut outcomes = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let out = nargof(&["test", "--config", arg(&cfg), "--out", arg(dir.path()), "--seed", "5"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["command"], "test");
        assert!(dir.path().join("density.csv").exists());
        outcomes.push(std::fs::read(dir.path().join("outcome.json")).unwrap());
    }
    assert_eq!(outcomes[0], outcomes[1]);
    let v: serde_json::Value = serde_json::from_slice(&outcomes[0]).unwrap();
    let p = v["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn empty_data_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty.txt");
    std::fs::write(&data, "# no observations\n\n").unwrap();
    let cfg = configs().join("default.toml");
    let out = nargof(&["test", "--config", arg(&cfg), "--out", arg(dir.path()), "--data", arg(&data)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_data_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.txt");
    std::fs::write(&data, "0.1\n0.2\nabc\n").unwrap();
    let cfg = configs().join("default.toml");
    let out = nargof(&["fit", "--config", arg(&cfg), "--out", arg(dir.path()), "--data", arg(&data)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains('3'));
}

#[test]
fn simulate_then_fit_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("default.toml");
    let out = nargof(&["simulate", "--config", arg(&cfg), "--out", arg(dir.path()), "--set", "sample.n=800"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("series.csv")).unwrap();
    let values: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values.len(), 801);
    let series = dir.path().join("series.txt");
    std::fs::write(&series, values.join("\n")).unwrap();
    let fit_dir = dir.path().join("fit");
    let out = nargof(&["fit", "--config", arg(&cfg), "--out", arg(&fit_dir), "--data", arg(&series)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fit_dir.join("fit.json").exists());
}

#[test]
fn mc_reruns_are_byte_identical_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_mc_config(dir.path());
    let mut runs = Vec::new();
    for workers in ["1", "3"] {
        let out_dir = dir.path().join(format!("w{workers}"));
        let out = nargof(&["mc", "--config", arg(&cfg), "--out", arg(&out_dir), "--workers", workers]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let files: Vec<Vec<u8>> = ["report.json", "replications.csv", "aggregates.csv", "manifest.json"]
            .iter()
            .map(|f| std::fs::read(out_dir.join(f)).unwrap())
            .collect();
        runs.push(files);
    }
    assert_eq!(runs[0], runs[1]);
}
