use std::path::Path;
use std::process::{Command, Output};

fn dagconf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dagconf"))
        .args(args)
        .env_remove("FMDSE_STORE")
        .output()
        .unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn short_clean_loop_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dagconf(&["conftest", "--budget", "4", "--seed", "7", "--out", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn seeded_violation_exits_one_with_a_type_i_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dagconf(&["conftest", "--seeded-violation", "V1", "--out", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Type-I violation"), "{stdout}");
    assert!(stdout.contains("fix site: model or implementation"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["violations"][0]["classification"], "type-i");
    assert_eq!(report["stop"], "violation");
}

#[test]
fn sim_run_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert!(dagconf(&["sim-run", "--seed", "7", "--out", arg(d)]).status.success());
    }
    for f in ["trace.jsonl", "metrics.json", "run.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn abstract_and_metrics_read_sim_run_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(dagconf(&["sim-run", "--out", arg(&run)]).status.success());
    let abs = dir.path().join("abs.jsonl");
    assert!(dagconf(&["abstract", arg(&run.join("trace.jsonl")), "--out", arg(&abs)]).status.success());
    assert!(std::fs::read_to_string(&abs).unwrap().lines().count() > 1);
    let m = dagconf(&["metrics", arg(&run.join("run.json"))]);
    assert!(m.status.success());
    assert_eq!(m.stdout, std::fs::read(run.join("metrics.json")).unwrap());
}

#[test]
fn replay_reports_divergence_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let walks = dir.path().join("walks");
    let out = dagconf(&["fuzz-model", "-n", "1", "-d", "200", "--out", arg(&walks)]);
    assert!(out.status.success());
    let trace = walks.join("trace-0.jsonl");
    let ok = dagconf(&["replay", arg(&trace), "--out", arg(&dir.path().join("r1"))]);
    assert_eq!(ok.status.code(), Some(0));
    let mut lines: Vec<serde_json::Value> = std::fs::read_to_string(&trace)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    lines[5]["post_digest"] = lines[2]["post_digest"].clone();
    let tampered = dir.path().join("tampered.jsonl");
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(&tampered, text).unwrap();
    let out_dir = dir.path().join("r2");
    let bad = dagconf(&["replay", arg(&tampered), "--out", arg(&out_dir)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("DigestMismatch at step 4"));
    assert!(out_dir.join("divergence.json").exists());
}

#[test]
fn harness_defects_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[sim]\nnum_nodez = 4\n").unwrap();
    assert_eq!(dagconf(&["--config", arg(&bad), "sim-run"]).status.code(), Some(2));
    assert_eq!(dagconf(&["conftest", "--seeded-violation", "V11"]).status.code(), Some(2));
    assert_eq!(dagconf(&["fuzz-impl", "--grid", "4/2"]).status.code(), Some(2));
    assert_eq!(dagconf(&["abstract", arg(&dir.path().join("missing.jsonl"))]).status.code(), Some(2));
}
