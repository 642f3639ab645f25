//! End-to-end tests of the command-line exit-code contract and artifacts.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_popgame")
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(bin())
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn simulate_bundled_two_link_converges() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_path("mixed_autonomy_2link.json");
    let output = run(&["simulate", scenario.to_str().unwrap()], dir.path());
    assert_eq!(output.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("mixed_autonomy_2link_summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["converged"], serde_json::Value::Bool(true));
    assert_eq!(summary["lyapunov_violations"].as_u64(), Some(0));
    let csv =
        std::fs::read_to_string(dir.path().join("mixed_autonomy_2link_trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x_1,x_2,x_3,x_4,p_1,p_2,p_3,p_4,V,nash_gap"));
}

#[test]
fn simulate_malformed_json_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let output = run(&["simulate", bad.to_str().unwrap()], dir.path());
    assert_eq!(output.status.code(), Some(2));
    // the diagnostic carries the parser's line/column position
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line") && stderr.contains("column"), "{stderr}");
}

#[test]
fn simulate_zero_horizon_writes_initial_row_only() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_path("mixed_autonomy_2link.json");
    let output = run(
        &["simulate", scenario.to_str().unwrap(), "--horizon", "0"],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(0));
    let csv =
        std::fs::read_to_string(dir.path().join("mixed_autonomy_2link_trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2); // header + initial row
}

#[test]
fn certify_road_split_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_path("road_split.json");
    let output = run(&["certify", scenario.to_str().unwrap()], dir.path());
    assert_eq!(output.status.code(), Some(0));
    let cert: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("road_split_certificate.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(cert["verdict"], "certified");
    assert_eq!(cert["omegas"].as_array().unwrap().len(), 4);
    assert!(cert["lambda_max"].as_f64().unwrap() <= -1e-8);
}

#[test]
fn certify_forced_identity_weights_exits_1_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("forced.json");
    std::fs::write(
        &scenario,
        r#"{
            "game": {
                "type": "mixed_autonomy",
                "mu": 0.5,
                "delays": [
                    {"type": "affine", "a": 1.0, "alpha": 1.0},
                    {"type": "affine", "a": 1.0, "alpha": 1.0}
                ]
            },
            "certify": {"weights": [1.0, 1.0]}
        }"#,
    )
    .unwrap();
    let output = run(&["certify", scenario.to_str().unwrap()], dir.path());
    assert_eq!(output.status.code(), Some(1));
    let cert: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("forced_certificate.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(cert["verdict"], "refuted");
    assert!(cert["witness"]["zeta"].as_array().is_some());
}

#[test]
fn certify_tiny_budget_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("tiny.json");
    std::fs::write(
        &scenario,
        r#"{
            "game": {"type": "road_split", "traversal": [1,1],
                     "crossing": [1,1], "detour": [2.7,2.7],
                     "masses": [0.5,0.5]},
            "certify": {"weights": [1.0, 1.0], "restarts": 0,
                        "iterations": 0, "theta_max": 1e-9}
        }"#,
    )
    .unwrap();
    let output = run(&["certify", scenario.to_str().unwrap()], dir.path());
    assert_eq!(output.status.code(), Some(4));
}

#[test]
fn verify_bundled_scenarios_exit_0() {
    let dir = tempfile::tempdir().unwrap();
    for name in [
        "mixed_autonomy_2link.json",
        "mixed_autonomy_smoothing.json",
        "road_split.json",
    ] {
        let scenario = scenario_path(name);
        let output = run(&["verify", scenario.to_str().unwrap()], dir.path());
        assert_eq!(output.status.code(), Some(0), "{name}");
    }
}

#[test]
fn verify_corrupted_sigma_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("corrupt.json");
    std::fs::write(
        &scenario,
        r#"{
            "game": {
                "type": "mixed_autonomy",
                "mu": 0.5,
                "delays": [
                    {"type": "affine", "a": 1.0, "alpha": 1.0},
                    {"type": "affine", "a": 1.0, "alpha": 1.0}
                ]
            },
            "corrupt_sigma": true
        }"#,
    )
    .unwrap();
    let output = run(&["verify", scenario.to_str().unwrap()], dir.path());
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn batch_mode_runs_multiple_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let a = scenario_path("mixed_autonomy_2link.json");
    let b = scenario_path("road_split.json");
    let output = Command::new(bin())
        .args(["simulate", a.to_str().unwrap(), b.to_str().unwrap(), "--out"])
        .arg(dir.path())
        .env("POPGAME_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    assert!(dir.path().join("mixed_autonomy_2link_trajectory.csv").exists());
    assert!(dir.path().join("road_split_trajectory.csv").exists());
}

#[test]
fn seed_override_changes_the_sampled_start() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let scenario = dir_a.path().join("nostart.json");
    std::fs::write(
        &scenario,
        r#"{
            "game": {
                "type": "mixed_autonomy",
                "mu": 0.5,
                "delays": [
                    {"type": "affine", "a": 1.0, "alpha": 1.0},
                    {"type": "affine", "a": 1.0, "alpha": 1.0}
                ]
            },
            "horizon": 1.0
        }"#,
    )
    .unwrap();
    let out_a = run(
        &["simulate", scenario.to_str().unwrap(), "--seed", "1"],
        dir_a.path(),
    );
    let out_b = run(
        &["simulate", scenario.to_str().unwrap(), "--seed", "2"],
        dir_b.path(),
    );
    assert_eq!(out_a.status.code(), Some(0));
    assert_eq!(out_b.status.code(), Some(0));
    let csv_a = std::fs::read(dir_a.path().join("nostart_trajectory.csv")).unwrap();
    let csv_b = std::fs::read(dir_b.path().join("nostart_trajectory.csv")).unwrap();
    assert_ne!(csv_a, csv_b);
}
