use std::path::PathBuf;
use std::process::{Command, Output};

fn taskcomm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskcomm")).args(args).env_remove("TASKCOMM_THREADS").output().expect("spawn taskcomm")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("taskcomm-exit-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn unknown_config_key_exits_with_2() {
    let dir = scratch("config");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[system]\nantennas = 4\n").unwrap();
    let out = taskcomm(&["evaluate", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("antennas"));
}

#[test]
fn missing_artifact_names_the_producing_command() {
    let dir = scratch("artifact");
    let out = taskcomm(&["finetune", "--solver", "du-bca", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("pretrain-"), "{stderr}");
}

#[test]
fn unknown_solver_is_rejected_by_the_parser() {
    let out = taskcomm(&["run", "--solver", "zf"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown solver"));
}
