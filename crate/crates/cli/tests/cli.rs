//! End-to-end tests for the `mfg` binary: exit codes, artifact layout,
//! hash guarding, and run-to-run determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Single population, congestion off, coarse grid: solves in well under a
/// second and converges in one fictitious-play iteration.
const FREE_FLOW: &str = r#"{
  "seed": 3,
  "speed": { "k_min": 0.5, "k_max": 1.0, "a_self": 0.0, "a_cross": 0.0 },
  "grid": { "lo": [-1.0, -0.5], "hi": [1.0, 0.5], "h": 0.1, "dt": 0.1, "t_max": 4.0 },
  "populations": [
    { "target": [ { "ball": { "center": [0.7, 0.0], "radius": 0.12 } } ],
      "initial": { "sampler": "gaussian", "center": [-0.6, 0.0], "std": 0.15, "count": 10 } }
  ]
}"#;

/// Two populations swapping sides head on with strong cross congestion;
/// one iteration from the stationary start is far from equilibrium.
const SWAP: &str = r#"{
  "seed": 5,
  "speed": { "k_min": 0.2, "k_max": 1.0, "a_self": 1.0, "a_cross": 3.0, "sigma": 0.12 },
  "grid": { "lo": [-1.2, -0.5], "hi": [1.2, 0.5], "h": 0.1, "dt": 0.1, "t_max": 10.0 },
  "populations": [
    { "target": [ { "ball": { "center": [0.75, 0.0], "radius": 0.15 } } ],
      "initial": { "sampler": "gaussian", "center": [-0.75, 0.0], "std": 0.12, "count": 25 } },
    { "target": [ { "ball": { "center": [-0.75, 0.0], "radius": 0.15 } } ],
      "initial": { "sampler": "gaussian", "center": [0.75, 0.0], "std": 0.12, "count": 25 } }
  ]
}"#;

fn mfg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mfg"))
}

fn write_scenario(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("failed to spawn mfg")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process had no exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn missing_scenario_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(mfg()
        .args(["solve", "--scenario"])
        .arg(dir.path().join("nope.json"))
        .arg("--out")
        .arg(dir.path().join("out")));
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("nope.json"));
}

#[test]
fn cfl_violation_exits_3_naming_the_inequality() {
    let dir = tempfile::tempdir().unwrap();
    let bad = FREE_FLOW.replace("\"dt\": 0.1", "\"dt\": 0.3");
    let scenario = write_scenario(dir.path(), "cfl.json", &bad);
    let out = run(mfg()
        .args(["solve", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(dir.path().join("out")));
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
    let msg = stderr(&out);
    assert!(msg.contains("CFL") && msg.contains("dt"), "got: {msg}");
}

#[test]
fn solve_writes_value_and_trajectory_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), "scenario.json", FREE_FLOW);
    let out_dir = dir.path().join("run");
    let out = run(mfg()
        .args(["solve", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let csv = fs::read_to_string(out_dir.join("phi_pop0.csv")).unwrap();
    assert!(csv.starts_with("t,x0,x1,phi\n"));
    let bin = fs::read(out_dir.join("phi_pop0.bin")).unwrap();
    assert_eq!(&bin[..4], b"MFGV");
    assert!(out_dir.join("trajectories_pop0.csv").exists());

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["scenario_sha256"].as_str().unwrap().len(), 64);
    // Every artifact except the manifest itself is hash-recorded.
    let hashed = manifest["artifacts"].as_object().unwrap();
    for name in ["phi_pop0.csv", "phi_pop0.bin", "trajectories_pop0.csv"] {
        assert!(hashed.contains_key(name), "manifest misses {name}");
    }
}

#[test]
fn equilibrium_without_congestion_converges_in_one_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), "scenario.json", FREE_FLOW);
    let out_dir = dir.path().join("run");
    let out = run(mfg()
        .args(["equilibrium", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["converged"], true);
    assert_eq!(result["iterations"], 1);

    let log = fs::read_to_string(out_dir.join("iteration_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2, "header plus one iteration row:\n{log}");
}

#[test]
fn same_seed_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), "scenario.json", FREE_FLOW);
    for name in ["a", "b"] {
        let out = run(mfg()
            .args(["equilibrium", "--scenario"])
            .arg(&scenario)
            .arg("--out")
            .arg(dir.path().join(name)));
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    }
    for file in ["iteration_log.csv", "trajectories_pop0.csv", "measures_pop0.csv", "result.json"]
    {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn verify_round_trip_passes() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), "scenario.json", FREE_FLOW);
    let out_dir = dir.path().join("run");
    let out = run(mfg()
        .args(["equilibrium", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let out = run(mfg()
        .args(["verify", "--scenario"])
        .arg(&scenario)
        .arg("--artifacts")
        .arg(&out_dir));
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(stdout.contains("PASS dpp"), "got: {stdout}");

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["pass"] == true));
}

#[test]
fn tampered_artifact_fails_the_hash_check() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), "scenario.json", FREE_FLOW);
    let out_dir = dir.path().join("run");
    let out = run(mfg()
        .args(["equilibrium", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let victim = out_dir.join("trajectories_pop0.csv");
    let mut bytes = fs::read(&victim).unwrap();
    bytes.push(b'x');
    fs::write(&victim, bytes).unwrap();

    let out = run(mfg()
        .args(["verify", "--scenario"])
        .arg(&scenario)
        .arg("--artifacts")
        .arg(&out_dir));
    assert_eq!(code(&out), 5, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("hash mismatch"));
}

#[test]
fn mismatched_scenario_fails_the_hash_check() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), "scenario.json", FREE_FLOW);
    let out_dir = dir.path().join("run");
    let out = run(mfg()
        .args(["equilibrium", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let other = write_scenario(dir.path(), "other.json", &FREE_FLOW.replace('3', "4"));
    let out = run(mfg()
        .args(["verify", "--scenario"])
        .arg(&other)
        .arg("--artifacts")
        .arg(&out_dir));
    assert_eq!(code(&out), 5, "stderr: {}", stderr(&out));
}

#[test]
fn unconverged_run_exits_4_and_fails_the_gap_check() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), "swap.json", SWAP);
    let out_dir = dir.path().join("run");
    let out = run(mfg()
        .args(["equilibrium", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out_dir)
        .args(["--max-iters", "1", "--mode", "picard", "--tol", "1e-12"]));
    assert_eq!(code(&out), 4, "stderr: {}", stderr(&out));
    // Artifacts are still written on exit 4.
    assert!(out_dir.join("iteration_log.csv").exists());
    assert!(out_dir.join("manifest.json").exists());

    let out = run(mfg()
        .args(["verify", "--scenario"])
        .arg(&scenario)
        .arg("--artifacts")
        .arg(&out_dir));
    assert_eq!(code(&out), 1, "stderr: {}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let gap = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "equilibrium_gap")
        .expect("gap check present");
    assert_eq!(gap["pass"], false, "one iteration should leave a large optimality gap");
}

#[test]
fn solve_accepts_a_stored_bundle_directory() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), "scenario.json", FREE_FLOW);
    let eq_dir = dir.path().join("eq");
    let out = run(mfg()
        .args(["equilibrium", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&eq_dir));
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let solve_dir = dir.path().join("resolve");
    let out = run(mfg()
        .args(["solve", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&solve_dir)
        .arg("--bundles")
        .arg(&eq_dir));
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(solve_dir.join("phi_pop0.csv").exists());
}
