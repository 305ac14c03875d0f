//! Full-size acceptance suite: prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. The determinism criterion drives the built
//! binary, the second time with a single worker thread.

use std::process::Command;

use taskcomm_cli::checks::{self, Scale};

fn run_binary(args: &[String]) -> anyhow::Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_taskcomm")).args(args).env_remove("TASKCOMM_THREADS").output()?;
    if !out.status.success() {
        anyhow::bail!("taskcomm {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr));
    }
    Ok(())
}

fn main() {
    println!("acceptance suite");
    let results = checks::all(&Scale::full(), &run_binary, &["--threads", "1"]);
    let passed = results.iter().filter(|c| c.passed).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
