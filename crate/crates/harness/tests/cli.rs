use std::process::Command;

use zkfl_harness::report::CSV_HEADER;

fn zkfl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_zkfl"))
}

#[test]
fn zero_rounds_give_header_only_and_degenerate_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("zero.toml");
    std::fs::write(&cfg, "rounds = 0\n").unwrap();
    let status = zkfl().arg("--config").arg(&cfg).arg("--out").arg(dir.path()).arg("run").output().unwrap().status;
    assert!(status.success());
    let csv = std::fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
    assert_eq!(csv, format!("{}\n", CSV_HEADER.join(",")));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["degenerate"], true);
    assert!(summary["modes"][0]["final_accuracy"].is_null());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    for text in ["unknown_key = 1\n", "malicious_ids = [1, 2, 3, 4, 5]\n", "n_clients = 0\n"] {
        std::fs::write(&cfg, text).unwrap();
        let out = zkfl().arg("--config").arg(&cfg).arg("--out").arg(dir.path()).arg("run").output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{text}");
    }
    let out = zkfl().args(["--out"]).arg(dir.path()).args(["ablate-malicious", "--counts", "5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = zkfl().arg("--config").arg(dir.path().join("missing.toml")).arg("run").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    std::fs::write(&cfg, "rounds = 2\nmodes = [\"standard_fl\", \"fl_kem\"]\n").unwrap();
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status =
            zkfl().arg("--config").arg(&cfg).arg("--out").arg(&out).arg("--no-timing").arg("run").output().unwrap().status;
        assert!(status.success());
        csvs.push(std::fs::read(out.join("rounds.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs.remove(0)).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2);
}

#[test]
fn selftest_passes_and_fault_injection_is_caught() {
    let out = zkfl().arg("selftest").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("zkp/soundness"));
    for check in ["norm", "challenge", "algebraic"] {
        let out = zkfl().arg("selftest").env("ZKFL_SELFTEST_DISABLE_CHECK", check).output().unwrap();
        assert_eq!(out.status.code(), Some(1), "{check}");
        let text = String::from_utf8(out.stdout).unwrap();
        let line = text.lines().find(|l| l.starts_with("zkp/soundness")).unwrap();
        assert!(line.ends_with("FAIL"), "{check}: {line}");
    }
}
