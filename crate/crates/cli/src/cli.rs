//! Command-line front end shared by the binary and the in-process runner of
//! the self-test.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::checks::{self, Scale};
use crate::commands::{self, Options};
use crate::config::{ConfigError, ExperimentConfig, SolverKind};

#[derive(Debug, Parser)]
#[command(name = "taskcomm", version, about = "Task-oriented MIMO precoding experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration; every key is optional.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for artifacts, results.csv and manifest.json.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, env = "TASKCOMM_THREADS")]
    pub threads: Option<usize>,
    /// Overrides `solver.kind`: bca, bca-mm, du-bca, du-bca-mm or identity.
    #[arg(long, value_parser = parse_solver)]
    pub solver: Option<SolverKind>,
    /// Feature statistics to use instead of `<out>/gm.json`.
    #[arg(long, value_name = "PATH")]
    pub gm: Option<PathBuf>,
    /// Network to use instead of the one in `<out>`.
    #[arg(long, value_name = "PATH")]
    pub net: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full pipeline at the configured operating point.
    Run(Common),
    /// Optimize feature samples and write their class statistics (gm.json).
    PretrainFeatures(Common),
    /// Train an unfolded precoder on the rate-reduction objective (net.json).
    PretrainPrecoder(Common),
    /// Fine-tune a pretrained network on the classification loss (net_finetuned.json).
    Finetune(Common),
    /// Monte-Carlo accuracy of the configured solver (results.csv).
    Evaluate(Common),
    /// Every solver at every sweep point (results.csv).
    Sweep(Common),
    /// Reduced-size property checks; exits nonzero if any fails.
    Selftest {
        #[arg(long, env = "TASKCOMM_THREADS")]
        threads: Option<usize>,
    },
}

fn parse_solver(s: &str) -> Result<SolverKind, String> {
    SolverKind::parse(s).ok_or_else(|| format!("unknown solver `{s}` (expected bca, bca-mm, du-bca, du-bca-mm or identity)"))
}

/// Configures the global worker pool once; later requests in the same
/// process keep the existing pool.
fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(ConfigError("--threads must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    Ok(())
}

pub fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(kind) = common.solver {
        cfg.solver.kind = kind;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn options(common: &Common) -> Result<Options> {
    set_threads(common.threads)?;
    Ok(Options { config: load_config(common)?, out: common.out.clone(), gm: common.gm.clone(), net: common.net.clone() })
}

/// Runs a parsed command; returns the text for stdout.
pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Run(c) => commands::run(&options(&c)?),
        Command::PretrainFeatures(c) => commands::pretrain_features(&options(&c)?),
        Command::PretrainPrecoder(c) => commands::pretrain_precoder(&options(&c)?),
        Command::Finetune(c) => commands::finetune(&options(&c)?),
        Command::Evaluate(c) => commands::evaluate(&options(&c)?),
        Command::Sweep(c) => commands::sweep(&options(&c)?),
        Command::Selftest { threads } => {
            set_threads(threads)?;
            let results = checks::all(&Scale::quick(), &run_in_process, &[]);
            let failed: Vec<String> = results.iter().filter(|c| !c.passed).map(|c| c.id.to_string()).collect();
            if failed.is_empty() {
                Ok(format!("selftest: all {} checks passed", results.len()))
            } else {
                Err(anyhow::anyhow!("selftest: checks {} failed", failed.join(", ")))
            }
        }
    }
}

/// Parses and executes `args` (without the program name) in this process.
pub fn run_in_process(args: &[String]) -> Result<()> {
    let argv = std::iter::once(OsString::from("taskcomm")).chain(args.iter().map(OsString::from));
    let cli = Cli::try_parse_from(argv).map_err(|e| ConfigError(e.to_string()))?;
    execute(cli).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_the_file() {
        let cli = Cli::try_parse_from(["taskcomm", "evaluate", "--seed", "9", "--solver", "bca"]).unwrap();
        let Command::Evaluate(common) = cli.command else { panic!("wrong subcommand") };
        let cfg = load_config(&common).unwrap();
        assert_eq!(cfg.run.seed, 9);
        assert_eq!(cfg.solver.kind, SolverKind::Bca);
        assert!(Cli::try_parse_from(["taskcomm", "run", "--solver", "lmmse"]).is_err());
    }
}
