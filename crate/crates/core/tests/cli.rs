mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::config_path;

fn dlhb(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlhb")).args(args).current_dir(dir).output().expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn pipeline(dir: &Path, seed: &str) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let cfg = config_path("smoke.toml");
    let cfg = cfg.to_str().unwrap();
    ok(dlhb(&["gen", "--config", cfg, "--seed", seed, "--out", "ds.bin"], dir));
    ok(dlhb(&["train", "--config", cfg, "--seed", seed, "--dataset", "ds.bin", "--out", "model.bin"], dir));
    ok(dlhb(&["sweep-snr", "--config", cfg, "--seed", seed, "--model", "model.bin", "--out", "snr.csv"], dir));
    let read = |f: &str| std::fs::read(dir.join(f)).unwrap();
    (read("ds.bin"), read("model.bin"), read("snr.csv"))
}

#[test]
fn smoke_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, csv) = pipeline(dir.path(), "3");
    assert!(String::from_utf8(csv).unwrap().starts_with("sweep_db,method,mean_se,std_se,trials\n"));
    let cfg = config_path("smoke.toml");
    let cfg = cfg.to_str().unwrap();
    ok(dlhb(&["sweep-corruption", "--config", cfg, "--model", "model.bin", "--out", "cor.csv"], dir.path()));
    let out = ok(dlhb(&["time", "--config", cfg, "--model", "model.bin", "--out", "time.csv"], dir.path()));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("speedup="));
    let timing = std::fs::read_to_string(dir.path().join("time.csv")).unwrap();
    assert_eq!(timing.lines().count(), 3);
    // Default output path comes from the config.
    ok(dlhb(&["sweep-snr", "--config", cfg, "--model", "model.bin"], dir.path()));
    assert!(dir.path().join("smoke.csv").exists());
}

#[test]
fn repeated_seed_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(pipeline(a.path(), "11"), pipeline(b.path(), "11"));
}

#[test]
fn failures_are_one_line_and_leave_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dlhb(&["gen", "--config", "missing.toml", "--out", "ds.bin"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("dlhb-error code="));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);

    let out = dlhb(&["gen", "--bogus"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("dlhb-error code=usage"));

    // A model for another scenario is a dimension error.
    let smoke = config_path("smoke.toml");
    let desk = config_path("desk.toml");
    ok(dlhb(&["gen", "--config", smoke.to_str().unwrap(), "--out", "ds.bin"], dir.path()));
    let out = dlhb(&["train", "--config", desk.to_str().unwrap(), "--dataset", "ds.bin", "--out", "m.bin"], dir.path());
    assert!(!out.status.success());
    assert!(!dir.path().join("m.bin").exists());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("dlhb-error code=dimension"));
}

#[test]
fn version_reports_formats() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dlhb(&["--version"], dir.path()));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("dataset format 1") && text.contains("model format 1"), "{text}");
}
