//! Subcommand implementations. Artifacts live in the output directory under
//! fixed names so later stages find what earlier stages wrote.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde_json::{json, Value};
use taskcomm::artifact::{gm_from_json, gm_to_json};
use taskcomm::unfolded::{net_from_json, net_to_json, FinetuneOutcome, TrainOutcome};
use taskcomm::{GmModel, SystemConfig, UnfoldedNet};

use crate::config::{ExperimentConfig, SolverKind};
use crate::output::{render_csv, OutputDir, ResultRow};
use crate::pipeline::{self, FeatureStage};

pub const GM_FILE: &str = "gm.json";
pub const NET_FILE: &str = "net.json";
pub const FINETUNED_FILE: &str = "net_finetuned.json";
pub const RESULTS_FILE: &str = "results.csv";

/// A required input file is absent; maps to exit code 2.
#[derive(Debug)]
pub struct MissingArtifact {
    pub what: &'static str,
    pub path: PathBuf,
    pub hint: String,
}

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} not found at {}; {}", self.what, self.path.display(), self.hint)
    }
}

impl std::error::Error for MissingArtifact {}

/// Resolved inputs of one invocation.
#[derive(Debug, Clone)]
pub struct Options {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    /// Overrides `<out>/gm.json`.
    pub gm: Option<PathBuf>,
    /// Overrides the network file picked by `evaluate` and `finetune`.
    pub net: Option<PathBuf>,
}

fn read_artifact(what: &'static str, path: &Path, hint: String) -> Result<String> {
    if !path.exists() {
        return Err(MissingArtifact { what, path: path.to_path_buf(), hint }.into());
    }
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn out_flag(o: &Options) -> String {
    format!("--out {}", o.out.display())
}

fn load_gm(o: &Options, dir: &mut OutputDir) -> Result<GmModel> {
    let path = o.gm.clone().unwrap_or_else(|| o.out.join(GM_FILE));
    let hint = format!("run `taskcomm pretrain-features {}` first or pass --gm", out_flag(o));
    let text = read_artifact("feature statistics", &path, hint)?;
    dir.record_input(&format!("input:{}", path.display()), &text);
    let gm = gm_from_json(&text).with_context(|| format!("invalid feature statistics in {}", path.display()))?;
    let system = o.config.system_config(o.config.system.slots, o.config.snr_db());
    if gm.dim() != system.feature_dim() || gm.num_classes() != system.classes {
        return Err(taskcomm::Error::Artifact(format!(
            "{} holds {} classes of dimension {}, the configuration needs {} of dimension {}",
            path.display(),
            gm.num_classes(),
            gm.dim(),
            system.classes,
            system.feature_dim()
        ))
        .into());
    }
    Ok(gm)
}

fn same_shape(a: &SystemConfig, b: &SystemConfig) -> bool {
    a.rx_antennas == b.rx_antennas
        && a.slots == b.slots
        && a.classes == b.classes
        && a.devices.len() == b.devices.len()
        && a.devices.iter().zip(&b.devices).all(|(x, y)| x.feature_dim == y.feature_dim && x.tx_antennas == y.tx_antennas)
}

fn load_net(o: &Options, path: &Path, hint: String, dir: &mut OutputDir) -> Result<UnfoldedNet> {
    let text = read_artifact("precoding network", path, hint)?;
    dir.record_input(&format!("input:{}", path.display()), &text);
    let net = net_from_json(&text).with_context(|| format!("invalid precoding network in {}", path.display()))?;
    let system = o.config.system_config(o.config.system.slots, o.config.snr_db());
    if !same_shape(&net.config, &system) {
        return Err(taskcomm::Error::Artifact(format!("{} was trained for different system dimensions", path.display())).into());
    }
    Ok(net)
}

fn unfolded_kind(o: &Options) -> Result<SolverKind> {
    let kind = o.config.solver.kind;
    if kind.variant().is_none() {
        return Err(crate::config::ConfigError(format!(
            "solver {} has no network to train; use --solver du-bca or --solver du-bca-mm",
            kind.name()
        ))
        .into());
    }
    Ok(kind)
}

fn feature_json(stage: &FeatureStage) -> Value {
    match stage.objectives {
        Some((initial, fin)) => json!({ "source": "optimized", "initial_objective": initial, "final_objective": fin }),
        None => json!({ "source": "synthetic" }),
    }
}

fn pretrain_json(t: &TrainOutcome) -> Value {
    json!({
        "initial_objective": t.initial_objective,
        "final_objective": t.final_objective,
        "evaluations": t.evaluations,
        "parameter_count": t.net.parameter_count(),
    })
}

fn finetune_json(t: &FinetuneOutcome) -> Value {
    json!({ "initial_loss": t.initial_loss, "final_loss": t.final_loss, "evaluations": t.evaluations })
}

fn single_point(o: &Options) -> Vec<(usize, f64)> {
    vec![(o.config.system.slots, o.config.snr_db())]
}

pub fn pretrain_features(o: &Options) -> Result<String> {
    let mut dir = OutputDir::create(&o.out)?;
    let stage = pipeline::pretrain_features(&o.config)?;
    let path = dir.write(GM_FILE, &(gm_to_json(&stage.gm)? + "\n"))?;
    let stages = json!({ "features": feature_json(&stage) });
    dir.finish("pretrain-features", &o.config, &single_point(o), stages)?;
    Ok(format!("wrote {}", path.display()))
}

pub fn pretrain_precoder(o: &Options) -> Result<String> {
    let kind = unfolded_kind(o)?;
    let mut dir = OutputDir::create(&o.out)?;
    let gm = load_gm(o, &mut dir)?;
    let trained = pipeline::pretrain_precoder(&o.config, &gm, kind, o.config.system.slots, o.config.snr_db())?;
    let path = dir.write(NET_FILE, &(net_to_json(&trained.net)? + "\n"))?;
    let stages = json!({ "pretrain": pretrain_json(&trained) });
    dir.finish("pretrain-precoder", &o.config, &single_point(o), stages)?;
    Ok(format!("wrote {} (mean rate reduction {:.6} -> {:.6})", path.display(), trained.initial_objective, trained.final_objective))
}

pub fn finetune(o: &Options) -> Result<String> {
    let mut dir = OutputDir::create(&o.out)?;
    let gm = load_gm(o, &mut dir)?;
    let path = o.net.clone().unwrap_or_else(|| o.out.join(NET_FILE));
    let hint = format!("run `taskcomm pretrain-precoder {}` first or pass --net", out_flag(o));
    let net = load_net(o, &path, hint, &mut dir)?;
    if o.config.finetune.steps == 0 {
        return Err(crate::config::ConfigError("finetune.steps is 0; nothing to do".into()).into());
    }
    let tuned = pipeline::finetune(&o.config, &gm, &net, o.config.system.slots, o.config.snr_db())?.expect("steps > 0 always fine-tunes");
    let written = dir.write(FINETUNED_FILE, &(net_to_json(&tuned.net)? + "\n"))?;
    let stages = json!({ "finetune": finetune_json(&tuned) });
    dir.finish("finetune", &o.config, &single_point(o), stages)?;
    Ok(format!("wrote {} (loss {:.6} -> {:.6})", written.display(), tuned.initial_loss, tuned.final_loss))
}

pub fn evaluate(o: &Options) -> Result<String> {
    let cfg = &o.config;
    let kind = cfg.solver.kind;
    let mut dir = OutputDir::create(&o.out)?;
    let gm = load_gm(o, &mut dir)?;
    let net = if kind.variant().is_some() {
        let path = o.net.clone().unwrap_or_else(|| {
            let tuned = o.out.join(FINETUNED_FILE);
            if tuned.exists() {
                tuned
            } else {
                o.out.join(NET_FILE)
            }
        });
        let hint = format!("run `taskcomm pretrain-precoder {} --solver {}` first or pass --net", out_flag(o), kind.name());
        Some(load_net(o, &path, hint, &mut dir)?)
    } else {
        None
    };
    let (slots, snr) = (cfg.system.slots, cfg.snr_db());
    let start = std::time::Instant::now();
    let stats = pipeline::evaluate(cfg, &gm, &pipeline::precoding(cfg, kind, net.clone())?, slots, snr)?;
    let point = pipeline::PointOutcome {
        kind,
        slots,
        snr_db: snr,
        pretrain: None,
        finetune: None,
        net,
        stats,
        wall_ms: start.elapsed().as_millis(),
    };
    let rows = vec![ResultRow::new(0, cfg, &point)];
    let path = dir.write(RESULTS_FILE, &render_csv(&rows))?;
    dir.finish("evaluate", cfg, &single_point(o), json!({}))?;
    Ok(summary(&rows, &path))
}

fn summary(rows: &[ResultRow], path: &Path) -> String {
    let mut s = String::new();
    for r in rows {
        s.push_str(&format!(
            "{:<10} O={} snr={:>5} dB  accuracy {:.4} ± {:.4}  rate reduction {:.4}\n",
            r.solver, r.slots, r.snr_db, r.accuracy_mean, r.accuracy_stderr, r.objective
        ));
    }
    s.push_str(&format!("wrote {}", path.display()));
    s
}

fn point_stages(p: &pipeline::PointOutcome) -> Value {
    json!({
        "solver": p.kind.name(),
        "slots": p.slots,
        "snr_db": p.snr_db,
        "pretrain": p.pretrain.as_ref().map(pretrain_json),
        "finetune": p.finetune.as_ref().map(finetune_json),
    })
}

/// Full pipeline at the configured operating point.
pub fn run(o: &Options) -> Result<String> {
    let cfg = &o.config;
    let mut dir = OutputDir::create(&o.out)?;
    let features = pipeline::pretrain_features(cfg)?;
    dir.write(GM_FILE, &(gm_to_json(&features.gm)? + "\n"))?;
    let point = pipeline::run_point(cfg, &features.gm, cfg.solver.kind, cfg.system.slots, cfg.snr_db())?;
    if let Some(t) = &point.pretrain {
        dir.write(NET_FILE, &(net_to_json(&t.net)? + "\n"))?;
    }
    if let Some(t) = &point.finetune {
        dir.write(FINETUNED_FILE, &(net_to_json(&t.net)? + "\n"))?;
    }
    let rows = vec![ResultRow::new(0, cfg, &point)];
    let path = dir.write(RESULTS_FILE, &render_csv(&rows))?;
    let stages = json!({ "features": feature_json(&features), "points": [point_stages(&point)] });
    dir.finish("run", cfg, &single_point(o), stages)?;
    Ok(summary(&rows, &path))
}

/// Every solver at every sweep point. Points run in parallel; rows are
/// written in sweep order.
pub fn sweep(o: &Options) -> Result<String> {
    let cfg = &o.config;
    let mut dir = OutputDir::create(&o.out)?;
    let features = pipeline::pretrain_features(cfg)?;
    dir.write(GM_FILE, &(gm_to_json(&features.gm)? + "\n"))?;
    let points = cfg.sweep_points();
    let jobs: Vec<(usize, f64, SolverKind)> =
        points.iter().flat_map(|&(o, s)| cfg.sweep_solvers().into_iter().map(move |k| (o, s, k))).collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(slots, snr, kind)| pipeline::run_point(cfg, &features.gm, kind, slots, snr))
        .collect::<taskcomm::Result<Vec<_>>>()?;
    let rows: Vec<ResultRow> = outcomes.iter().enumerate().map(|(i, p)| ResultRow::new(i, cfg, p)).collect();
    let path = dir.write(RESULTS_FILE, &render_csv(&rows))?;
    let stages = json!({
        "features": feature_json(&features),
        "points": outcomes.iter().map(point_stages).collect::<Vec<_>>(),
    });
    dir.finish("sweep", cfg, &points, stages)?;
    Ok(summary(&rows, &path))
}

/// Exit code for a failed command: 2 for configuration and artifact
/// problems, 3 for numerical failures, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use taskcomm::Error as E;
    for cause in err.chain() {
        if cause.is::<crate::config::ConfigError>() || cause.is::<MissingArtifact>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidConfig(_)
                | E::RankTooLarge { .. }
                | E::Artifact(_)
                | E::Json(_)
                | E::EmptyClass(_)
                | E::DimensionMismatch { .. } => 2,
                _ => 3,
            };
        }
    }
    1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn options(dir: &str) -> Options {
        let mut config = ExperimentConfig::default();
        config.features.steps = 0;
        config.unfolded.train_channels = 2;
        config.unfolded.layers = 1;
        config.unfolded.steps = 2;
        config.finetune.steps = 2;
        config.finetune.samples = 20;
        config.finetune.channels = 1;
        config.evaluation.channels = 2;
        config.evaluation.samples_per_channel = 10;
        Options { config, out: std::env::temp_dir().join(format!("taskcomm-cmd-{}-{dir}", std::process::id())), gm: None, net: None }
    }

    #[test]
    fn missing_artifacts_are_reported_with_a_hint() {
        let o = options("missing");
        let err = evaluate(&o).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        assert!(err.to_string().contains("pretrain-features"));
        fs::remove_dir_all(&o.out).ok();
    }

    #[test]
    fn staged_commands_reproduce_run() {
        let mut o = options("staged");
        o.config.solver.kind = SolverKind::DuBcaMm;
        pretrain_features(&o).unwrap();
        pretrain_precoder(&o).unwrap();
        finetune(&o).unwrap();
        evaluate(&o).unwrap();
        let staged = fs::read_to_string(o.out.join(RESULTS_FILE)).unwrap();
        let mut whole = o.clone();
        whole.out = o.out.join("whole");
        run(&whole).unwrap();
        let direct = fs::read_to_string(whole.out.join(RESULTS_FILE)).unwrap();
        assert_eq!(staged, direct);
        fs::remove_dir_all(&o.out).ok();
    }

    #[test]
    fn training_commands_need_an_unfolded_solver() {
        let o = options("kind");
        let err = pretrain_precoder(&o).unwrap_err();
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn numeric_errors_map_to_three() {
        let err = anyhow::Error::from(taskcomm::Error::NotPositiveDefinite { pivot: 0, value: -1.0 });
        assert_eq!(exit_code(&err), 3);
        assert_eq!(exit_code(&anyhow::anyhow!("io")), 1);
    }
}
