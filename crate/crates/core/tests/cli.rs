//! End-to-end runs of the binary: argument handling, exit codes, and the
//! files each subcommand leaves behind.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qprob"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("the binary should spawn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal expected")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).expect("config should be writable");
    path
}

const VERIFY_CONFIG: &str = r#"{
    "schema_version": 1,
    "kind": "verify",
    "grid": { "x_min": -10.0, "x_max": 10.0, "n_points": 801, "boundary": "vanishing" },
    "fixtures": [
        { "name": "resting", "shape": { "gaussian": { "center": 0.0, "variance": 1.0 } } }
    ]
}"#;

#[test]
fn missing_arguments_exit_with_usage_errors() {
    let out = bin().output().expect("spawn");
    assert_eq!(code(&out), 2, "bare invocation: {}", stderr(&out));

    let out = run(&["verify"]);
    assert_eq!(code(&out), 2, "missing config path: {}", stderr(&out));
}

#[test]
fn missing_config_file_exits_2() {
    let out = run(&["verify", "/nonexistent/nowhere.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nowhere.json"), "stderr: {}", stderr(&out));
}

#[test]
fn malformed_json_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "broken.json", "{ this is not json");
    let out = run(&["verify", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).starts_with("error:"), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_config_keys_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let body = VERIFY_CONFIG.replacen("\"kind\"", "\"typo_key\": true, \"kind\"", 1);
    let cfg = write_config(dir.path(), "typo.json", &body);
    let out = run(&["verify", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("typo_key"), "stderr: {}", stderr(&out));
}

#[test]
fn subcommand_kind_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "verify.json", VERIFY_CONFIG);
    let out = run(&["dispersion", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("dispersion"), "stderr: {}", stderr(&out));
}

#[test]
fn unstable_step_size_aborts_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "kg.json",
        r#"{
            "schema_version": 1,
            "kind": "evolve",
            "grid": { "x_min": -10.0, "x_max": 10.0, "n_points": 201, "boundary": "vanishing" },
            "fixtures": [
                { "name": "packet", "shape": { "gaussian": { "center": 0.0, "variance": 1.0 } } }
            ],
            "solver": { "equation": "klein_gordon", "dt": 0.5, "steps": 10, "snapshot_every": 5 }
        }"#,
    );
    let out_dir = dir.path().join("run");
    let out = run(&["evolve", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
    assert!(stderr(&out).starts_with("error:"));
    assert!(!out_dir.join("snapshots.csv").exists(), "no partial table expected");
    assert!(!out_dir.join("summary.json").exists(), "no report expected");
}

#[test]
fn evolve_writes_the_advertised_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "evolve.json",
        r#"{
            "schema_version": 1,
            "kind": "evolve",
            "grid": { "x_min": -10.0, "x_max": 10.0, "n_points": 301, "boundary": "vanishing" },
            "fixtures": [
                { "name": "packet", "shape": { "gaussian": { "center": 0.0, "variance": 1.0, "k0": 0.4 } } }
            ],
            "solver": { "equation": "schrodinger", "dt": 1e-3, "steps": 40, "snapshot_every": 20 }
        }"#,
    );
    let out_dir = dir.path().join("run");
    let out = run(&["evolve", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(
        stdout(&out).contains("evolve: 1 checks, 0 failed"),
        "stdout: {}",
        stdout(&out)
    );

    let csv = std::fs::read_to_string(out_dir.join("snapshots.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "time,x,re_psi,im_psi,rho,j");
    assert_eq!(lines.count(), 3 * 301, "three snapshots of the whole grid");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(report["kind"], "evolve");
    assert_eq!(report["checks"][0]["id"], "schrodinger-norm");
    assert_eq!(report["checks"][0]["pass"], true);
    assert!(
        out_dir.join("summary.meta.json").exists(),
        "timestamps belong in the side file"
    );
}

#[test]
fn dispersion_respects_the_configured_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("scan");
    let body = format!(
        r#"{{
            "schema_version": 1,
            "kind": "dispersion",
            "grid": {{ "x_min": 0.0, "x_max": 6.283185307179586, "n_points": 128, "boundary": "periodic" }},
            "dispersion": {{ "equation": "schrodinger", "modes": [1, 2], "dt": 2e-3, "snapshots": 60 }},
            "output": {:?}
        }}"#,
        out_dir.to_str().unwrap()
    );
    let cfg = write_config(dir.path(), "disp.json", &body);
    let out = run(&["dispersion", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let csv = std::fs::read_to_string(out_dir.join("dispersion.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "mode,wavenumber,omega_measured,omega_predicted,rel_error"
    );
    assert_eq!(lines.count(), 2, "one row per mode");
    assert!(out_dir.join("summary.json").exists());
}

#[test]
fn classical_scan_covers_the_hbar_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("scan");
    let body = format!(
        r#"{{
            "schema_version": 1,
            "kind": "classical_scan",
            "grid": {{ "x_min": -12.0, "x_max": 12.0, "n_points": 1201, "boundary": "vanishing" }},
            "classical": {{
                "sigmas": [0.6, 0.9],
                "p0": 1.0,
                "hbars": [1.0, 0.5],
                "dt": 1e-4,
                "steps": 100,
                "sample_every": 50
            }},
            "output": {:?}
        }}"#,
        out_dir.to_str().unwrap()
    );
    let cfg = write_config(dir.path(), "classical.json", &body);
    let out = run(&["classical", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let csv = std::fs::read_to_string(out_dir.join("classical.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "sigma,hbar,trajectory_error,weighted_residual");
    assert_eq!(lines.count(), 4, "one row per (hbar, sigma) pair");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    let ids: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["classical-action", "localization-trend", "relativistic-action"]);
    assert!(report["summary"]["pass"].as_bool().unwrap(), "report: {report}");
}
