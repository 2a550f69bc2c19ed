use std::process::{Command, Output};

fn supersim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supersim"))
        .args(args)
        .env_remove("SUPERSIM_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn predict_emits_json() {
    let o = supersim(&["predict", "--n", "1000000", "--lambda", "0.5", "--d", "2"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v.is_object());
}

#[test]
fn simulate_writes_snapshot_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snaps.csv");
    let o = supersim(&[
        "simulate", "--n", "50", "--samples", "5", "--warmup", "10", "--out", path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("t,total,max,ell_0"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn oracle_csv_sums_to_one() {
    let o = supersim(&["oracle", "--n", "2", "--lambda", "0.5", "--cap", "4"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "state_index,x1,x2,prob");
    let total: f64 = lines.map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn meanfield_json_has_fixed_point() {
    let o = supersim(&["meanfield", "--lambda", "0.5", "--d", "2", "--k", "6", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let values = v["values"].as_array().unwrap();
    assert!((values[0].as_f64().unwrap() - 0.5).abs() < 1e-15);
    assert!(v["residual"].as_f64().unwrap() < 1e-12);
}

#[test]
fn verify_runs_named_check() {
    let o = supersim(&["verify", "--check", "chernoff"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("PASS"));
}

#[test]
fn verify_rejects_unknown_check() {
    let o = supersim(&["verify", "--check", "no-such-check"]);
    assert!(!o.status.success());
}

#[test]
fn verify_lists_thirteen_checks() {
    let o = supersim(&["verify", "--list"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 13);
}

#[test]
fn seed_from_environment_is_reproducible() {
    let run = |seed: &str| {
        Command::new(env!("CARGO_BIN_EXE_supersim"))
            .args(["couple", "--n", "20", "--lambda", "0.5", "--samples", "20"])
            .env("SUPERSIM_SEED", seed)
            .output()
            .unwrap()
            .stdout
    };
    assert_eq!(run("42"), run("42"));
    assert_ne!(run("42"), run("43"));
}

#[test]
fn invalid_parameters_fail() {
    let o = supersim(&["simulate", "--lambda", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}
