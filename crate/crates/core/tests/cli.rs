//! End-to-end runs of the `pgkit` binary.

use std::path::Path;
use std::process::{Command, Output};

const HMM: &str = r#"{ "family": "finite-hmm",
  "transition": [[0.7, 0.3], [0.4, 0.6]],
  "emission": [[0.8, 0.2], [0.3, 0.7]],
  "initial": [0.5, 0.5] }"#;

const LGSS: &str = r#"{ "family": "lgss", "a": 0.9, "c": 1.0, "q": 0.5, "r": 1.0, "m0": 0.0, "p0": 1.0 }"#;

fn pgkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgkit")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn simulate_writes_an_observation_file_smc_can_read() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "hmm.json", HMM);
    let out = dir.path().join("sim");
    let o = pgkit(&["--seed", "3", "--out", out.to_str().unwrap(), "simulate", "--model", &model, "--len", "12"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let obs = std::fs::read_to_string(out.join("observations.csv")).unwrap();
    assert!(obs.starts_with("t,y\n0,"));
    assert_eq!(obs.lines().count(), 13);

    let obs_path = out.join("observations.csv");
    let o = pgkit(&["--seed", "3", "smc", "run", "--model", &model, "--obs", obs_path.to_str().unwrap(), "-n", "50"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr).into_owned();
    assert!(err.contains("log_likelihood"), "{err}");
}

#[test]
fn same_seed_same_output() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "lgss.json", LGSS);
    let a = pgkit(&["--seed", "11", "simulate", "--model", &model, "--len", "30"]);
    let b = pgkit(&["--seed", "11", "--threads", "1", "simulate", "--model", &model, "--len", "30"]);
    let c = pgkit(&["--seed", "12", "simulate", "--model", &model, "--len", "30"]);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&b));
    assert_ne!(stdout(&a), stdout(&c));
}

#[test]
fn pg_run_emits_samples() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "hmm.json", HMM);
    let obs = write(dir.path(), "obs.csv", "t,y\n0,0\n1,1\n2,1\n3,0\n");
    let out = dir.path().join("pg");
    let o = pgkit(&[
        "--out",
        out.to_str().unwrap(),
        "pg",
        "run",
        "--model",
        &model,
        "--obs",
        &obs,
        "-n",
        "5",
        "--iterations",
        "40",
        "--burn-in",
        "10",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let written: Vec<String> =
        std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(written.iter().any(|f| f == "summary.json"), "{written:?}");
    assert!(written.len() >= 2, "{written:?}");
}

#[test]
fn smoke_invariance_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("inv");
    let o = pgkit(&["--seed", "5", "--out", out.to_str().unwrap(), "pg", "invariance-check", "--grid", "smoke", "--no-lgss"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let assertions = summary["result"]["assertions"].as_array().expect("assertions in summary");
    assert!(!assertions.is_empty());
    assert!(assertions.iter().all(|a| a["passed"] == true));
    assert!(out.join("enumeration.csv").exists());
    assert!(out.join("summary.json").exists());
}

#[test]
fn failed_assertion_exits_one() {
    // with N held at 2 the update fraction collapses as T grows
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "sv.json", r#"{ "family": "sv", "phi": 0.95, "sigma": 0.3, "beta": 0.7 }"#);
    let o = pgkit(&[
        "--seed", "1", "scaling", "sweep", "--model", &model, "--ts", "2,100", "--fixed", "2", "--chains", "20",
        "--iterations", "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr).into_owned();
    assert!(err.contains("FAIL median-update-fraction-non-decreasing"), "{err}");
    assert!(stdout(&o).starts_with("# scaling\n"), "{}", stdout(&o));
}

#[test]
fn bad_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "hmm.json", HMM);
    let bad_header = write(dir.path(), "bad.csv", "time,obs\n0,1\n");
    let o = pgkit(&["smc", "run", "--model", &model, "--obs", &bad_header, "-n", "10"]);
    assert_eq!(o.status.code(), Some(2));

    let missing = dir.path().join("nope.json");
    let o = pgkit(&["simulate", "--model", missing.to_str().unwrap(), "--len", "3"]);
    assert_eq!(o.status.code(), Some(2));

    let empty_grid = write(dir.path(), "cfg.json", r#"{ "kind": "minorize", "model": "hmm.json", "ts": [] }"#);
    let o = pgkit(&["run", "--config", &empty_grid]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));

    let unknown_key = write(dir.path(), "cfg2.json", r#"{ "kind": "minorize", "model": "hmm.json", "sample": 3 }"#);
    let o = pgkit(&["run", "--config", &unknown_key]);
    assert_eq!(o.status.code(), Some(2));

    let o = pgkit(&["smc", "run", "--model", &model]);
    assert_eq!(o.status.code(), Some(2), "missing argument is a usage error");
}

#[test]
fn particle_dump_uses_one_based_indices() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "hmm.json", HMM);
    let obs = write(dir.path(), "obs.csv", "t,y\n0,0\n1,1\n2,0\n");
    let o = pgkit(&["smc", "run", "--model", &model, "--obs", &obs, "-n", "4", "--dump-particles"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let body = text.split("# particles\n").nth(1).expect("particles series");
    let mut rows = csv::Reader::from_reader(body.as_bytes());
    assert_eq!(rows.headers().unwrap(), vec!["t", "particle", "ancestor", "x", "log_weight"]);
    let mut count = 0;
    for r in rows.records() {
        let r = r.unwrap();
        let i: usize = r[1].parse().unwrap();
        assert!((1..=4).contains(&i));
        if &r[0] == "0" {
            assert!(r[2].is_empty());
        } else {
            assert!((1..=4).contains(&r[2].parse::<usize>().unwrap()));
        }
        count += 1;
    }
    assert_eq!(count, 12);
}
