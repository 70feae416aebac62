//! End-to-end checks of the binary: exit codes, determinism, and the
//! output-as-config round trip.

use std::path::PathBuf;
use std::process::{Command, Output};

fn dbd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn temp_path(name: &str) -> PathBuf {
    let mut path = std::env::temp_dir();
    path.push(format!("dbd-cli-test-{}-{name}", std::process::id()));
    path
}

#[test]
fn unknown_strategy_is_a_config_error() {
    let out = dbd(&["efficiency", "--strategy", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown strategy"), "stderr: {err}");
}

#[test]
fn invalid_flag_value_is_a_config_error() {
    let out = dbd(&["tscan", "--engine", "banana"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn undersampled_scan_is_a_config_error() {
    let out = dbd(&["tscan", "--strategy", "ds-dbd", "--g", "0.02", "--points", "5"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("undersampled"), "stderr: {err}");
}

#[test]
fn efficiency_reports_the_reference_numbers() {
    let out = dbd(&["efficiency", "--strategy", "all"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let row = |name: &str| -> Vec<f64> {
        text.lines()
            .find(|l| l.starts_with(name))
            .unwrap_or_else(|| panic!("row {name} in output:\n{text}"))
            .split_whitespace()
            .skip(1)
            .map(|v| v.parse().unwrap())
            .collect()
    };
    let c = row("C-DBD ");
    assert!((c[0] - 0.97348).abs() < 2e-3, "C-DBD BS {}", c[0]);
    assert!((c[1] - 0.96426).abs() < 2e-3, "C-DBD M {}", c[1]);
    let ds = row("DS-DBD ");
    assert!((ds[0] - 0.99937).abs() < 2e-3, "DS BS {}", ds[0]);
    assert!((ds[1] - 0.97465).abs() < 2e-3, "DS M {}", ds[1]);
}

#[test]
fn scans_are_deterministic_and_round_trip_their_config() {
    let first = temp_path("rob1.txt");
    let second = temp_path("rob2.txt");
    let third = temp_path("rob3.txt");
    let args = [
        "robustness",
        "--strategy",
        "ds-dbd",
        "--g",
        "0.02",
        "--sigma-r",
        "0,0.02",
        "--realizations",
        "3",
        "--seed",
        "11",
    ];
    let run = |path: &PathBuf, extra: &[&str]| {
        let mut full: Vec<&str> = extra.to_vec();
        let path_str = path.to_str().unwrap();
        full.extend_from_slice(&["-o", path_str]);
        let out = dbd(&full);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&first, &args);
    run(&second, &args);
    let bytes1 = std::fs::read(&first).unwrap();
    assert_eq!(bytes1, std::fs::read(&second).unwrap(), "same flags, same bytes");

    let first_str = first.to_str().unwrap().to_string();
    run(&third, &["robustness", "--config", &first_str]);
    assert_eq!(bytes1, std::fs::read(&third).unwrap(), "output re-runs as config");

    for path in [first, second, third] {
        let _ = std::fs::remove_file(path);
    }
}

#[test]
fn header_names_the_command_seed_and_versions() {
    let out = dbd(&["efficiency", "--strategy", "cd-dbd", "--seed", "42"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# dbd "), "version banner first");
    assert!(text.contains("(dbd-core "));
    assert!(text.contains("# command: efficiency"));
    assert!(text.contains("# seed: 42"));
    assert!(text.contains("# config-begin"));
    assert!(text.contains("# config-end"));
}

#[test]
fn flags_override_config_files() {
    let config = temp_path("override.toml");
    std::fs::write(&config, "strategy = \"c-dbd\"\nsigma_p = 0.01\n").unwrap();
    let out = dbd(&[
        "efficiency",
        "--config",
        config.to_str().unwrap(),
        "--strategy",
        "ds-dbd",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\nDS-DBD "), "flag strategy wins:\n{text}");
    assert!(text.contains("sigma_p = 0.01"), "file sigma_p kept:\n{text}");
    let _ = std::fs::remove_file(config);
}
