use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use met_cli::config::ExperimentConfig;
use met_cli::scenarios::find;

fn met(args: &[&str], workers: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_met"))
        .args(args)
        .env("MET_WORKERS", workers)
        .output()
        .unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("met-cli-test-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &PathBuf, cfg: &ExperimentConfig) -> String {
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn lists_scenarios_with_oracles() {
    let out = met(&["list-scenarios"], "1");
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 5);
    for name in [
        "fixed-jordan",
        "iid-diagonal",
        "upper-triangular-3d",
        "quasicompact-block",
        "identity",
    ] {
        assert!(text.contains(name), "{name} missing");
    }
}

#[test]
fn run_writes_versioned_outputs_identically_across_worker_counts() {
    let dir = scratch("run");
    let mut cfg = find("upper-triangular-3d").unwrap().config();
    let config = write_config(&dir, &cfg);
    let (a, b) = (dir.join("a"), dir.join("b"));
    let out = met(&["run", &config, "--output", a.to_str().unwrap()], "1");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(met(&["run", &config, "--output", b.to_str().unwrap()], "3")
        .status
        .success());
    for f in ["report.json", "spectrum.csv", "filtration.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let spectrum = fs::read_to_string(a.join("spectrum.csv")).unwrap();
    assert!(spectrum.starts_with("# met spectrum v1\nk,n,sample,value\n"));
    // One row per order and grid length (a fixed base has one sample).
    assert_eq!(spectrum.lines().count(), 2 + 3 * 10);
    let filtration = fs::read_to_string(a.join("filtration.csv")).unwrap();
    assert!(filtration.starts_with("# met filtration v1\nlevel,n,cauchy_dist,equiv_residual\n"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["format_version"], 1);
    assert_eq!(report["pass"], true);

    cfg.outputs.formats = vec![met_cli::config::Format::Json];
    let config = write_config(&dir, &cfg);
    let c = dir.join("c");
    assert!(met(&["run", &config, "--output", c.to_str().unwrap()], "1")
        .status
        .success());
    assert!(c.join("report.json").exists() && !c.join("spectrum.csv").exists());
}

#[test]
fn failing_oracle_sets_exit_code() {
    let dir = scratch("fail");
    let mut cfg = find("identity").unwrap().config();
    cfg.oracle
        .as_mut()
        .unwrap()
        .exponents
        .as_mut()
        .unwrap()
        .values[0] = 0.5;
    let config = write_config(&dir, &cfg);
    let out = met(
        &["run", &config, "--output", dir.join("o").to_str().unwrap()],
        "1",
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("FAIL exponent[1]"));
}

#[test]
fn unknown_config_key_is_reported_with_line() {
    let dir = scratch("bad");
    let text = find("identity").unwrap().config().to_json().replacen(
        "\"run\": {",
        "\"run\": {\n    \"n_gird\": [1],",
        1,
    );
    let path = dir.join("bad.json");
    fs::write(&path, text).unwrap();
    let out = met(&["run", path.to_str().unwrap()], "1");
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line") && err.contains("n_gird"), "{err}");
}

#[test]
fn selfcheck_is_deterministic_and_detects_corruption() {
    let a = met(&["selfcheck", "--seed", "3", "--ops", "30"], "1");
    let b = met(&["selfcheck", "--seed", "3", "--ops", "30"], "2");
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let bad = met(
        &[
            "selfcheck",
            "--seed",
            "3",
            "--ops",
            "30",
            "--rel-slack",
            "-0.5",
        ],
        "1",
    );
    assert_eq!(bad.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(report["pass"], false);
    assert!(!report["failures"][0]["check"]["witnesses"].is_null());
}

#[test]
fn invalid_worker_count_is_rejected() {
    let out = met(&["list-scenarios"], "zero");
    assert_eq!(out.status.code(), Some(2));
}
