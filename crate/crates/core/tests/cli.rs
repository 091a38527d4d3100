use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppo-cma")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let config = json!({
        "env": "quadratic",
        "algo": { "mode": "vanilla-pg", "n": 20, "k": 3, "m": 8, "gamma": 0.0 },
        "total_steps": 40,
        "seeds": [0, 1],
        "output_dir": dir.join("runs"),
        "hidden": [8],
        "pretrain_steps": 20,
        "init_mean": [0.5, 0.5],
        "init_std": [0.2, 0.2]
    });
    fs::write(&path, config.to_string()).unwrap();
    path
}

#[test]
fn run_viz_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let config = config.to_str().unwrap();

    let out = cli(&["run", "--config", config, "--seed", "3", "--override", "algo.k=4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("seed 3"));
    let run_dir = dir.path().join("runs/seed_3");
    assert!(run_dir.join("summary.json").exists());
    assert!(!dir.path().join("runs/seed_0").exists());
    let recorded: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(recorded["algo"]["k"], 4);

    let out = cli(&["viz", "--run-dir", run_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let svg = fs::read_to_string(run_dir.join("didactic.svg")).unwrap();
    assert!(svg.contains("<ellipse"));
    assert!(run_dir.join("pg_trace.svg").exists());

    let out = cli(&["run", "--config", config]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = cli(&["score", "--runs", dir.path().join("runs").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("vanilla-pg"));
}

#[test]
fn sweep_prints_scores() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.json");
    let sweep = json!({
        "base": {
            "algo": { "n": 20, "k": 2, "m": 8, "gamma": 0.0 },
            "total_steps": 40,
            "hidden": [6],
            "pretrain_steps": 10,
            "record_didactic": false
        },
        "tasks": [{ "env": "quadratic" }],
        "arms": [{ "mode": "ppo-cma", "grid": { "algo.h": [1, 2] } }],
        "output_dir": dir.path().join("sweep")
    });
    fs::write(&path, sweep.to_string()).unwrap();
    let out = cli(&["sweep", "--config", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("ppo-cma algo.h=1") && text.contains("ppo-cma algo.h=2"), "{text}");
    assert!(dir.path().join("sweep/scores.csv").exists());
}

#[test]
fn errors_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let config = config.to_str().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["run", "--config", "/nonexistent/config.json"],
        vec!["run", "--config", config, "--override", "algo.mode=bogus"],
        vec!["run", "--config", config, "--override", "env=cartpole"],
        vec!["run", "--config", config, "--override", "nokey"],
        vec!["run", "--config", config, "--override", "total_steps=5"],
        vec!["viz", "--run-dir", "/nonexistent"],
        vec!["score", "--runs", "/nonexistent"],
    ];
    for args in cases {
        let out = cli(&args);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(stderr(&out).starts_with("error: "), "{args:?}: {}", stderr(&out));
    }
    let out = cli(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(!stderr(&out).is_empty());
}

#[test]
fn viz_rejects_point_mass_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out = cli(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "0",
        "--override",
        "env=point-mass",
        "--override",
        "init_mean=null",
        "--override",
        "init_std=null",
        "--override",
        "algo.n=100",
        "--override",
        "total_steps=100",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = cli(&["viz", "--run-dir", dir.path().join("runs/seed_0").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("quadratic"));
}
