use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mrv() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mrv"));
    cmd.env_remove("MRV_SEED");
    cmd
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mrv-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn simulate(log: &Path, seed: &str, extra: &[&str]) -> Output {
    mrv()
        .args([
            "simulate", "--n", "7", "--rounds", "8", "--w-max", "3", "--seed", seed, "--log",
        ])
        .arg(log)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn simulated_log_verifies_cleanly() {
    let dir = scratch("verify");
    let log = dir.join("run.log");
    let out = simulate(&log, "5", &["--thin", "--strategy", "6=withhold:0.4"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let tsv = dir.join("metrics.tsv");
    let out = mrv()
        .arg("verify")
        .arg("--log")
        .arg(&log)
        .arg("--tsv")
        .arg(&tsv)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let record = String::from_utf8(out.stdout).unwrap();
    assert!(record.contains("\"violations\":0"), "{record}");
    let rows = std::fs::read_to_string(&tsv).unwrap();
    assert_eq!(rows.lines().count(), 2);

    let out = mrv().arg("order").arg("--log").arg(&log).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn injected_faults_are_reported_as_violations() {
    let dir = scratch("fault");
    for (scenario, fault) in [
        ("exact-f-delta", "threshold-f"),
        ("coexistence-lead", "coexistence-round"),
    ] {
        let log = dir.join(format!("{scenario}.log"));
        let out = mrv()
            .args(["scenario", scenario, "--log"])
            .arg(&log)
            .output()
            .unwrap();
        assert!(out.status.success());
        let clean = mrv().arg("verify").arg("--log").arg(&log).output().unwrap();
        assert_eq!(clean.status.code(), Some(0));
        let out = mrv()
            .args(["verify", "--inject-fault", fault, "--log"])
            .arg(&log)
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(2),
            "fault {fault} went unnoticed on {scenario}"
        );
    }
}

#[test]
fn bad_input_exits_with_input_error() {
    let out = mrv()
        .args(["order", "--log", "/nonexistent/mrv.log"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    let dir = scratch("corrupt");
    let log = dir.join("run.log");
    assert!(simulate(&log, "1", &[]).status.success());
    let mut bytes = std::fs::read(&log).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x20;
    std::fs::write(&log, bytes).unwrap();
    let out = mrv().arg("verify").arg("--log").arg(&log).output().unwrap();
    assert_eq!(out.status.code(), Some(3));

    let out = mrv()
        .args([
            "simulate", "--n", "4", "--f", "2", "--rounds", "4", "--w-max", "2", "--log",
        ])
        .arg(dir.join("x.log"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn environment_seed_overrides_flag() {
    let dir = scratch("seed");
    let (a, b, c) = (dir.join("a.log"), dir.join("b.log"), dir.join("c.log"));
    assert!(simulate(&a, "11", &["--thin"]).status.success());
    let out = mrv()
        .env("MRV_SEED", "11")
        .args([
            "simulate", "--n", "7", "--rounds", "8", "--w-max", "3", "--seed", "99", "--thin",
            "--log",
        ])
        .arg(&b)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(simulate(&c, "12", &["--thin"]).status.success());
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn scenario_catalog_lists_and_runs() {
    let out = mrv().arg("scenario").output().unwrap();
    assert!(out.status.success());
    let listing = String::from_utf8(out.stdout).unwrap();
    assert_eq!(listing.lines().count(), 7);
    assert!(listing.contains("three-cycle"));

    let out = mrv().args(["scenario", "three-cycle"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("order\tA B C"), "{text}");
    assert!(text.contains("enforceable\t0"), "{text}");

    let out = mrv().args(["scenario", "no-such-case"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}
