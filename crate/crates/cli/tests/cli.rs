//! End-to-end behavior of the `rplsim` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios/matrix")
        .join(name)
}

fn rplsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rplsim"))
        .args(args)
        .env_remove("RPLSIM_OUT")
        .output()
        .unwrap()
}

fn run_short(file: &str, out: &Path, extra: &[&str]) -> Output {
    let path = scenario(file);
    let mut args = vec![
        "run",
        path.to_str().unwrap(),
        "--rounds",
        "2",
        "--duration",
        "600",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    rplsim(&args)
}

#[test]
fn run_writes_rounds_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_short("psm-i-blackhole.toml", dir.path(), &["--trace"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let cell = dir.path().join("psm-i-blackhole");
    let mut rdr = csv::Reader::from_path(cell.join("rounds.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["round", "metric", "value"]);
    let pdr_rows = rdr
        .records()
        .map(Result::unwrap)
        .filter(|r| &r[1] == "pdr")
        .count();
    assert_eq!(pdr_rows, 2);

    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(cell.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rounds"], 2);
    let pdr = summary["metrics"]["pdr"]["mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&pdr));

    let check = rplsim(&["check-trace", cell.join("trace.jsonl").to_str().unwrap()]);
    assert!(check.status.success());
    assert!(String::from_utf8_lossy(&check.stdout).contains("0 violations"));
}

#[test]
fn overrides_reach_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_short(
        "um-i-none.toml",
        dir.path(),
        &["--seed", "7", "--attack", "blackhole"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("um-i-none/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["adversary"]["attack"], "blackhole");
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario("um-i-none.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_rplsim"))
        .args([
            "run",
            path.to_str().unwrap(),
            "--rounds",
            "1",
            "--duration",
            "300",
        ])
        .env("RPLSIM_OUT", dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("um-i-none/summary.json").exists());
}

#[test]
fn malformed_scenario_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "name = \"bad\"\nseed = \"not a number\"\n").unwrap();
    let out = rplsim(&[
        "run",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains("bad.toml") || err.contains("seed"), "{err}");
}

#[test]
fn missing_scenario_is_reported() {
    let out = rplsim(&["run", "/nonexistent/scenario.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_trace_flags_a_broken_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_short("um-i-none.toml", dir.path(), &["--trace"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let path = dir.path().join("um-i-none/trace.jsonl");
    let text = fs::read_to_string(&path).unwrap();

    // dropping every delivery leaves sent packets unaccounted for
    let broken: String = text
        .lines()
        .filter(|l| !l.contains("\"data_delivered\""))
        .map(|l| format!("{l}\n"))
        .collect();
    assert_ne!(broken.len(), text.len());
    let bad = dir.path().join("broken.jsonl");
    fs::write(&bad, broken).unwrap();
    let out = rplsim(&["check-trace", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    fs::write(&bad, "{not json\n").unwrap();
    let out = rplsim(&["check-trace", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
