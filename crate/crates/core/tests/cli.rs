use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bridgekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bridgekit"))
        .args(args)
        .env_remove("BRIDGEKIT_SIZE_GUARD")
        .output()
        .expect("binary runs")
}

fn export(dir: &Path, name: &str, extra: &[&str]) -> String {
    let path = dir.join(format!("{name}.json"));
    let path_str = path.to_str().unwrap().to_string();
    let mut args = vec!["fixture", "export", "--fixture-name", name, "--output", &path_str];
    args.extend_from_slice(extra);
    let out = bridgekit(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    path_str
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("report is JSON")
}

#[test]
fn chain_fixture_passes_markov_check() {
    let dir = tempfile::tempdir().unwrap();
    let input = export(dir.path(), "chain", &["--seed", "3"]);
    let out = bridgekit(&["check", "--input", &input, "--property", "markov"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["holds"], Value::Bool(true), "{r}");
}

#[test]
fn reducible_chain_fails_irreducibility() {
    let dir = tempfile::tempdir().unwrap();
    let input = export(dir.path(), "reducible-chain", &[]);
    let out = bridgekit(&["decompose", "--input", &input]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(&out)["status"], "infeasible");
}

#[test]
fn shared_midpoint_decompose_returns_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let input = export(dir.path(), "shared-midpoint", &[]);
    let out = bridgekit(&["decompose", "--input", &input]);
    assert_eq!(out.status.code(), Some(1));
    let r = report(&out);
    assert_eq!(r["status"], "infeasible");
    let cert = &r["certificate"];
    assert_eq!(cert["edges"].as_array().unwrap().len(), 4);
    assert!((cert["imbalance"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn solve_and_oracle_agree_on_seeded_problem() {
    let dir = tempfile::tempdir().unwrap();
    let input = export(dir.path(), "brodinger", &["--seed", "11", "--states", "3", "--times", "4"]);
    let solved = bridgekit(&["solve", "--input", &input]);
    assert_eq!(solved.status.code(), Some(0), "{}", String::from_utf8_lossy(&solved.stderr));
    let s = report(&solved);
    assert_eq!(s["converged"], Value::Bool(true));

    let checked = bridgekit(&["oracle", "--input", &input]);
    assert_eq!(checked.status.code(), Some(0), "{}", String::from_utf8_lossy(&checked.stderr));
    let o = report(&checked);
    assert_eq!(o["status"], "agrees");
    let diff = (s["objective"].as_f64().unwrap() - o["oracle"]["objective"].as_f64().unwrap()).abs();
    assert!(diff <= 1e-8, "{diff}");
}

#[test]
fn folding_route_matches_direct_solve() {
    let dir = tempfile::tempdir().unwrap();
    let input = export(dir.path(), "brodinger", &["--seed", "4", "--times", "5"]);
    let direct = report(&bridgekit(&["solve", "--input", &input]));
    let folded = bridgekit(&["solve", "--input", &input, "--lambda", "1/2"]);
    assert_eq!(folded.status.code(), Some(0), "{}", String::from_utf8_lossy(&folded.stderr));
    let folded = report(&folded);
    assert_eq!(folded["route"], "folding");
    let diff = (direct["objective"].as_f64().unwrap() - folded["objective"].as_f64().unwrap()).abs();
    assert!(diff <= 1e-8, "{diff}");
}

#[test]
fn trace_streams_cycles_to_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let input = export(dir.path(), "schrodinger", &["--seed", "2"]);
    let out = bridgekit(&["solve", "--input", &input, "--trace"]);
    assert_eq!(out.status.code(), Some(0));
    let lines: Vec<Value> = String::from_utf8_lossy(&out.stderr)
        .lines()
        .map(|l| serde_json::from_str(l).expect("trace line is JSON"))
        .collect();
    assert!(!lines.is_empty());
    assert!(lines.iter().all(|l| l.get("residual").is_some()));
}

#[test]
fn malformed_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = bridgekit(&["solve", "--input", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).expect("error is JSON");
    assert_eq!(err["kind"], "parse", "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn size_guard_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = export(dir.path(), "reciprocal", &["--seed", "1", "--times", "4"]);
    let out = bridgekit(&["--size-guard", "10", "check", "--input", &input, "--property", "reciprocal"]);
    assert_eq!(out.status.code(), Some(2));
    let env = Command::new(env!("CARGO_BIN_EXE_bridgekit"))
        .args(["check", "--input", &input, "--property", "reciprocal"])
        .env("BRIDGEKIT_SIZE_GUARD", "10")
        .output()
        .unwrap();
    assert_eq!(env.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical_and_reparse() {
    let dir = tempfile::tempdir().unwrap();
    let input = export(dir.path(), "schrodinger", &["--seed", "9"]);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let run = bridgekit(&["solve", "--input", &input, "--output", out.to_str().unwrap()]);
        assert_eq!(run.status.code(), Some(0));
    }
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(a, b);
    let doc: Value = serde_json::from_slice(&a).unwrap();
    // the embedded solution re-parses as a measure and is Markov
    let sol = dir.path().join("sol.json");
    std::fs::write(&sol, serde_json::to_vec(&doc["solution"]).unwrap()).unwrap();
    let out = bridgekit(&["check", "--input", sol.to_str().unwrap(), "--property", "markov"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn fixture_list_names_all_fixtures() {
    let out = bridgekit(&["fixture", "list"]);
    assert_eq!(out.status.code(), Some(0));
    let names: Vec<String> = report(&out)
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["name"].as_str().unwrap().to_string())
        .collect();
    for want in ["shared-midpoint", "reducible-chain", "planted-violation", "schrodinger", "brodinger"] {
        assert!(names.iter().any(|n| n == want), "{want}");
    }
}
