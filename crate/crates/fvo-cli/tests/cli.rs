//! Command-line surface: subcommands run, exit codes carry categories.

use std::process::Command;

fn fvo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fvo"))
}

#[test]
fn list_scenarios_names_the_shipped_set() {
    let out = fvo().arg("list-scenarios").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for name in fvo_cli::assets::SCENARIO_NAMES {
        assert!(text.contains(name), "missing {name} in listing");
    }
}

#[test]
fn unknown_scenario_exits_with_validation_code() {
    let out = fvo().args(["run", "no_such_scenario"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_instant_round_trip() {
    let dir = std::env::temp_dir().join("fvo_cli_tests");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("instant.toml");
    std::fs::write(
        &path,
        r#"
required_mw = 5.0
[[asset]]
a = 2.0
b = 1.0
lo = -10.0
hi = 10.0
[[asset]]
a = 3.0
b = 1.0
lo = -10.0
hi = 10.0
"#,
    )
    .unwrap();
    let out = fvo().args(["solve-instant"]).arg(&path).output().unwrap();
    assert!(out.status.success());
    let sol: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let x = sol["x"].as_array().unwrap();
    assert!((x[0].as_f64().unwrap() - 3.0).abs() < 1e-9);
    assert!((x[1].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert!((sol["lambda"].as_f64().unwrap() + 13.0).abs() < 1e-9);
}

#[test]
fn validate_theorem1_reports_error_bound() {
    let out = fvo()
        .args([
            "validate-theorem1",
            "--service",
            "dm",
            "--steps",
            "11",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("max relative error"), "{text}");
}

#[test]
fn run_and_compare_round_trip() {
    let dir = std::env::temp_dir().join("fvo_cli_run_rt");
    let _ = std::fs::remove_dir_all(&dir);
    let out = fvo()
        .args(["run", "ieee14_dm_noise", "--horizon-s", "2"])
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for artifact in ["trace.csv", "metrics.json", "manifest.toml"] {
        assert!(dir.join(artifact).exists(), "missing {artifact}");
    }
    let cmp = fvo()
        .arg("compare")
        .arg(dir.join("trace.csv"))
        .args(["--window-start", "0.5"])
        .output()
        .unwrap();
    assert!(cmp.status.success());
    let report: serde_json::Value = serde_json::from_slice(&cmp.stdout).unwrap();
    assert_eq!(report["entries"].as_array().unwrap().len(), 1);
    let _ = std::fs::remove_dir_all(&dir);
}
