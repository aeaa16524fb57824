use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/hopf_cosforce.json")
}

fn varscale(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varscale")).args(args).output().unwrap()
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p
}

fn files_in(dir: &Path) -> BTreeSet<String> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn bundled_config_passes_and_finds_both_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = varscale(&["--config", bundled().to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}\n{}", String::from_utf8_lossy(&o.stderr));
    assert!(!stdout.contains("FAIL"), "{stdout}");

    for f in [
        "malkin_profile.csv",
        "zeros.json",
        "scaling_branch.csv",
        "convergence_report.csv",
        "convergence_report.json",
        "run_manifest.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    let zeros = read_json(&out.join("zeros.json"));
    let mut found: Vec<(f64, bool)> = zeros["zeros"]
        .as_array()
        .unwrap()
        .iter()
        .map(|z| (z["theta0"].as_f64().unwrap(), z["stable_candidate"].as_bool().unwrap()))
        .collect();
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert_eq!(found.len(), 2);
    assert!(found[0].0.abs() < 1e-8 && found[0].1);
    assert!((found[1].0 - std::f64::consts::PI).abs() < 1e-8 && !found[1].1);

    let csv = fs::read_to_string(out.join("malkin_profile.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("theta,M,M_error,Mprime"));
    assert_eq!(lines.count(), 128);
}

#[test]
fn ascending_ladder_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"eps_ladder": [0.001, 0.01, 0.1]}"#);
    let o = varscale(&["--config", cfg.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eps_ladder must be strictly decreasing"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn malformed_json_reports_its_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{\n  \"theta_grid\": 64,\n  \"seed\": \"x\"\n}");
    let o = varscale(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn unknown_problem_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"problem": "van-der-pol"}"#);
    let o = varscale(&["--config", cfg.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hopf-normal-cosforce"));
}

#[test]
fn malkin_stage_writes_only_its_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = varscale(&[
        "--config",
        bundled().to_str().unwrap(),
        "--stage",
        "malkin",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let expected: BTreeSet<String> = ["malkin_profile.csv", "zeros.json", "run_manifest.json"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    assert_eq!(files_in(&out), expected);
}

#[test]
fn unforced_cycle_fails_with_the_malkin_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"problem": "hopf-normal-free", "stages": ["malkin", "scaling"]}"#);
    let out = dir.path().join("out");
    let o = varscale(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let zeros = read_json(&out.join("zeros.json"));
    assert_eq!(zeros["identically_zero"], Value::Bool(true));
    let all = format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    assert!(all.contains("identically zero, method inapplicable"), "{all}");
}

#[test]
fn fixed_step_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
  "integrator": {"method": "rk4-fixed", "rk4_steps": 400},
  "theta_grid": 32,
  "eps_ladder": [0.1, 0.03, 0.01],
  "long_run": {"enabled": false},
  "stages": ["malkin", "scaling"]
}"#,
    );
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = varscale(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.code() != Some(2), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["malkin_profile.csv", "scaling_branch.csv"] {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs between runs");
    }
}

#[test]
fn manifest_echoes_every_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = varscale(&[
        "--config",
        bundled().to_str().unwrap(),
        "--stage",
        "cycle,malkin",
        "--seed",
        "42",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let m = read_json(&out.join("run_manifest.json"));
    assert_eq!(m["seed"], 42);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert!(m["tolerance_signature"].as_str().unwrap().contains("1e-12"));
    for ptr in [
        "/config/integrator/abs_tol",
        "/config/integrator/rel_tol",
        "/config/cycle/tolerance",
        "/config/malkin/zero_tolerance",
        "/config/audit",
        "/config/continuation/newton/tolerance",
        "/config/continuation/phi_noise",
        "/config/validator/fixed_point/tolerance",
        "/config/eps_ladder",
    ] {
        assert!(m.pointer(ptr).is_some(), "manifest lacks {ptr}");
    }
}
