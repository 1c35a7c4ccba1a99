use std::path::PathBuf;
use std::process::Command;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios").join(format!("{name}.toml"))
}

fn dagbft(args: &[&str]) -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_dagbft")).args(args).output().expect("binary runs");
    (out.status.success(), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn run_writes_artefacts() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("byz_equivocate");
    let (ok, stdout) = dagbft(&["run", "--scenario", s.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(ok, "{stdout}");
    assert!(stdout.contains("stop=AllSettled"));
    for f in ["metrics.csv", "commits_v1.csv", "effects_v2.txt", "trace.csv", "dag.dot", "violations.txt"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("time,from,to,kind,digest\n"));
    assert!(trace.contains(",Certificate,"));
}

#[test]
fn fuzz_and_oracle_check() {
    let s = scenario("fuzz");
    let (ok, stdout) = dagbft(&["fuzz", "--scenario", s.to_str().unwrap(), "--seeds", "0..8"]);
    assert!(ok, "{stdout}");
    assert!(stdout.contains("8 seeds, 0 with violations"));
    let (ok, stdout) =
        dagbft(&["oracle-check", "--scenario", s.to_str().unwrap(), "--seeds", "0..5", "--rounds", "10", "--permutations", "5"]);
    assert!(ok, "{stdout}");
    assert!(stdout.contains("0 mismatches"));
}

#[test]
fn export_dot_stops_at_round() {
    let s = scenario("indirect_commit");
    let (ok, dot) = dagbft(&["export-dot", "--scenario", s.to_str().unwrap(), "--at-round", "2"]);
    assert!(ok);
    assert!(dot.starts_with("digraph dag {"));
    assert!(dot.contains("label=\"v2@1\", shape=box"));
    assert!(!dot.contains("@3"));
}

#[test]
fn bad_inputs_fail() {
    assert!(!dagbft(&["run", "--scenario", "/nonexistent.toml"]).0);
    let s = scenario("fuzz");
    assert!(!dagbft(&["fuzz", "--scenario", s.to_str().unwrap(), "--seeds", "5..5"]).0);
}
