use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use trailsim::sim::read_jsonl;

const BIN: &str = env!("CARGO_BIN_EXE_trailsim");

fn run(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("SEED");
    if let Some(s) = seed {
        cmd.env("SEED", s);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const HONEST: &str = r#"{"topology": {"kary": {"k": 2, "h": 3}}, "scheme": "trail", "versions": 1, "seed": 7}"#;

#[test]
fn simulate_writes_a_readable_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", HONEST);
    let log = dir.path().join("out.jsonl");
    let out = run(&["simulate", "--config", &cfg, "--log", log.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["seed"], 7);
    let entries = read_jsonl(&fs::read_to_string(&log).unwrap()).unwrap();
    assert!(entries.iter().any(|e| e.kind == "note:trail-verdict"));
}

#[test]
fn seed_variable_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", HONEST);
    let out = run(&["simulate", "--config", &cfg], Some("123"));
    assert_eq!(out.status.code(), Some(0));
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["seed"], 123);
    assert_eq!(run(&["simulate", "--config", &cfg], Some("abc")).status.code(), Some(3));
}

#[test]
fn bad_configs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    for (i, body) in [
        "not json",
        r#"{"topology": {"kary": {"k": 2, "h": 3}}, "scheme": "trail", "bogus": 1}"#,
        r#"{"topology": {"kary": {"k": 2, "h": 3}}, "scheme": "trail", "loss": 1.5}"#,
        r#"{"topology": {"kary": {"k": 2, "h": 3}}, "scheme": "nope"}"#,
    ]
    .iter()
    .enumerate()
    {
        let cfg = write(dir.path(), &format!("{i}.json"), body);
        assert_eq!(run(&["simulate", "--config", &cfg], None).status.code(), Some(3), "{body}");
    }
    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["simulate", "--config", missing.to_str().unwrap()], None).status.code(), Some(3));
}

#[test]
fn wrong_expectation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"topology": {"kary": {"k": 2, "h": 4}}, "scheme": "vera",
            "attack": {"kind": "rank_spoof", "nodes": [7]}, "expect": "succeeded"}"#,
    );
    let out = run(&["simulate", "--config", &cfg], None);
    assert_eq!(out.status.code(), Some(2));
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["outcome"], "blocked");
}

#[test]
fn table_csv_has_one_row_per_pair() {
    let out = run(&["table", "--k", "2,4", "--h", "3,4", "--out", "csv"], None);
    assert_eq!(out.status.code(), Some(0));
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    let headers = r.headers().unwrap().clone();
    assert_eq!(&headers[0], "k");
    let rows: Vec<_> = r.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    let k2h3 = &rows[0];
    assert_eq!((&k2h3[0], &k2h3[1], &k2h3[2]), ("2", "3", "15"));
}

#[test]
fn attack_matrix_all_match() {
    let out = run(&["attack-matrix", "--out", "csv"], None);
    assert_eq!(out.status.code(), Some(0));
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    let rows: Vec<_> = r.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 21);
    assert!(rows.iter().all(|r| &r[7] == "true"));
}

#[test]
fn chains_selftest_passes() {
    let out = run(&["chains", "selftest"], None);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.ends_with("PASS")).count(), 6);
}

#[test]
fn shipped_scenarios_meet_expectations() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let out = run(&["simulate", "--config", p.to_str().unwrap()], None);
        assert_eq!(out.status.code(), Some(0), "{}", p.display());
    }
}
