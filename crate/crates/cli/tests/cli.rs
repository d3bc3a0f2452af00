use std::fs;
use std::process::Command;

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_drivefalsify"))
}

const PARAMS: [&str; 6] = [
    "--param",
    "desVel1=80",
    "--param",
    "Hecate_desVel2=100",
    "--param",
    "Transition1=35",
];

#[test]
fn simulate_writes_one_row_per_sample() {
    for (dt, rows) in [("0.001", 70_001), ("0.01", 7_001)] {
        let dir = tempfile::tempdir().unwrap();
        let status = cli()
            .args(["simulate", "--version", "7.5", "--sequence", "TS1", "--dt", dt])
            .args(PARAMS)
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        let outputs = fs::read_to_string(dir.path().join("outputs.csv")).unwrap();
        assert_eq!(outputs.lines().count(), rows + 1, "dt {dt}");
        assert!(!outputs.contains(",-0,") && !outputs.contains(",-0\n"));
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert!(report["fitness"].is_number());
    }
}

#[test]
fn out_of_range_candidate_is_a_config_error() {
    let out = cli()
        .args(["simulate", "--version", "7.5", "--sequence", "TS1"])
        .args([
            "--param",
            "desVel1=180",
            "--param",
            "desVel2=100",
            "--param",
            "Transition1=35",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("desVel1"));
}

#[test]
fn replay_reproduces_a_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli()
        .args(["simulate", "--version", "1.0", "--sequence", "TS1"])
        .args(PARAMS)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let simulated = String::from_utf8(out.stdout).unwrap();
    let replayed = cli()
        .arg("replay")
        .arg(dir.path().join("replay.json"))
        .output()
        .unwrap();
    assert!(replayed.status.success());
    let replayed = String::from_utf8(replayed.stdout).unwrap();
    let fitness = |text: &str| {
        text.lines()
            .find(|l| l.starts_with("fitness"))
            .unwrap()
            .split_whitespace()
            .nth(1)
            .unwrap()
            .to_string()
    };
    assert_eq!(fitness(&simulated), fitness(&replayed));
}

#[test]
fn falsification_does_not_change_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    fs::write(
        &config,
        r#"{ "version": "1.0", "sequence": "TS1", "algorithm": "random", "budget": 3, "seeds": [1] }"#,
    )
    .unwrap();
    let out = cli()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("o/report.json").exists());
}

#[test]
fn unreadable_config_exits_nonzero() {
    let out = cli()
        .args(["run", "--config", "/nonexistent/c.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
