//! End-to-end tests of the binary: exit codes, output files, determinism.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slowfast"))
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn validate_catalog_model_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "validate", "--model", "cubic-gl", "--seed", "7", "--budget", "2000",
        ])
        .args(["--out", dir.path().to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = read(&dir.path().join("assumptions.csv"));
    assert!(csv.starts_with("check,status,"));
    assert!(csv.contains("A4d,pass"));
    assert!(dir.path().join("manifest.json").exists());
    assert!(dir.path().join("validate_report.json").exists());
}

#[test]
fn validate_broken_override_exits_two_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(
        &config,
        "[model]\nname = \"cubic-gl\"\n\n[model.overrides]\nb2_dissipativity = -1.0\n",
    )
    .unwrap();
    let output = bin()
        .args(["validate", "--seed", "1"])
        .args(["--config", config.to_str().unwrap()])
        .args(["--out", dir.path().join("out").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("A4d"), "stderr: {stderr}");
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[solver]\nnot_a_field = 1\n").unwrap();
    let output = bin()
        .args(["validate"])
        .args(["--config", config.to_str().unwrap()])
        .args(["--out", dir.path().join("out").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("not_a_field"), "stderr: {stderr}");
}

#[test]
fn unknown_model_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin()
        .args(["validate", "--model", "nope"])
        .args(["--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn simulate_zero_data_writes_zero_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "simulate",
            "--model",
            "deterministic-cubic",
            "--x0",
            "zero",
            "--y0",
            "zero",
            "--seed",
            "3",
        ])
        .args(["--out", dir.path().to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = read(&dir.path().join("trajectory.csv"));
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("path,time,component,mode_1"));
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        for value in &fields[3..] {
            assert_eq!(value.parse::<f64>().unwrap(), 0.0, "line: {line}");
        }
    }
}

#[test]
fn converge_replays_byte_identically() {
    let run = |dir: &Path| {
        let status = bin()
            .args([
                "converge",
                "--model",
                "linear",
                "--eps",
                "0.1,0.01",
                "--paths",
                "20",
                "--seed",
                "42",
                "--workers",
                "2",
            ])
            .args(["--config", config_path(dir).to_str().unwrap()])
            .args(["--out", dir.to_str().unwrap()])
            .status()
            .unwrap();
        assert!(status.success());
    };
    fn config_path(dir: &Path) -> std::path::PathBuf {
        let path = dir.join("config.toml");
        std::fs::write(
            &path,
            "[solver]\nhorizon = 0.2\n\n[experiment]\ndrift = \"closed_form_linear\"\nbootstrap_reps = 100\n",
        )
        .unwrap();
        path
    }
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run(dir_a.path());
    run(dir_b.path());
    for name in ["converge_errors.csv", "converge_summary.csv"] {
        assert_eq!(
            read(&dir_a.path().join(name)),
            read(&dir_b.path().join(name)),
            "{name} differs between identical runs"
        );
    }
    // Manifest digest matches a recomputation from the embedded config.
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&dir_a.path().join("manifest.json"))).unwrap();
    assert_eq!(manifest["master_seed"], 42);
    assert!(manifest["config_digest"].as_str().unwrap().len() == 64);
}

#[test]
fn results_are_independent_of_worker_count() {
    // Estimated-drift convergence on the cubic model: the drift cache fills
    // in whatever order the workers race, but entry values are pure
    // functions of the quantization cell, so outputs match byte for byte.
    let run = |dir: &Path, workers: &str| {
        let config = dir.join("config.toml");
        std::fs::write(
            &config,
            "[solver]\nhorizon = 0.1\n\n[experiment]\nensemble = 8\nbootstrap_reps = 50\n",
        )
        .unwrap();
        let status = bin()
            .args([
                "converge",
                "--model",
                "cubic-gl",
                "--eps",
                "0.1,0.05",
                "--paths",
                "12",
                "--seed",
                "9",
                "--workers",
                workers,
            ])
            .args(["--config", config.to_str().unwrap()])
            .args(["--out", dir.to_str().unwrap()])
            .status()
            .unwrap();
        assert!(status.success());
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run(dir_a.path(), "1");
    run(dir_b.path(), "4");
    for name in ["converge_errors.csv", "converge_summary.csv"] {
        assert_eq!(
            read(&dir_a.path().join(name)),
            read(&dir_b.path().join(name)),
            "{name} differs between 1 and 4 workers"
        );
    }
}

#[test]
fn env_var_sets_default_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["validate", "--model", "linear", "--budget", "1000"])
        .env("SLOWFAST_OUT_DIR", dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("manifest.json").exists());
    assert!(dir.path().join("assumptions.csv").exists());
}

#[test]
fn average_reports_drift_for_linear_model() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(&config, "[experiment]\nensemble = 16\n").unwrap();
    let status = bin()
        .args([
            "average", "--model", "linear", "--x", "e1:1.0", "--seed", "5",
        ])
        .args(["--config", config.to_str().unwrap()])
        .args(["--out", dir.path().to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = read(&dir.path().join("drift.csv"));
    assert!(csv.starts_with("node,xi,drift,std_err"));
    assert_eq!(csv.lines().count(), 18); // header + 17 nodes
}
