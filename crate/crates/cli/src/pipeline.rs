//! Experiment stages: feature pretraining, precoder pretraining, fine-tuning
//! and evaluation. Each stage draws from its own stream derived from
//! `run.seed`, so running the stages separately reproduces `run`, and the
//! evaluation stream does not depend on the solver (comparisons are paired).

use std::time::Instant;

use taskcomm::inference::evaluate_accuracy;
use taskcomm::mcr2::optimize_features;
use taskcomm::model::{make_gm_model, sample_features};
use taskcomm::seed::derive_seed;
use taskcomm::unfolded::{anchored_net, e2e_finetune, train_unfolded, FinetuneOutcome, SpsaConfig, TrainOutcome, TrainingSet};
use taskcomm::{AccuracyStats, GmModel, MonteCarlo, Precoding, Result, UnfoldedNet};

use crate::config::{ExperimentConfig, SolverKind};

/// Seed streams, one per stage.
pub mod stream {
    pub const FEATURES: u64 = 1;
    pub const TRAIN_CHANNELS: u64 = 2;
    pub const PRETRAIN: u64 = 3;
    pub const FINETUNE: u64 = 4;
    pub const EVALUATION: u64 = 5;
}

pub fn stage_seed(cfg: &ExperimentConfig, stream: u64) -> u64 {
    derive_seed(cfg.run.seed, stream)
}

#[derive(Debug, Clone)]
pub struct FeatureStage {
    pub gm: GmModel,
    /// Rate reduction of the sampled and of the optimized features; absent
    /// when the synthetic source is used as is.
    pub objectives: Option<(f64, f64)>,
}

/// Class statistics for the configured system. With `features.steps = 0`
/// these are the synthetic source itself; otherwise unit-norm samples are
/// drawn, pushed up the rate-reduction objective and summarized.
pub fn pretrain_features(cfg: &ExperimentConfig) -> Result<FeatureStage> {
    let system = cfg.system_config(cfg.system.slots, cfg.snr_db());
    let seed = stage_seed(cfg, stream::FEATURES);
    let source = make_gm_model(&system, cfg.features.subspace_rank, derive_seed(seed, 0))?;
    if cfg.features.steps == 0 {
        return Ok(FeatureStage { gm: source, objectives: None });
    }
    let batch = sample_features(&source, cfg.features.samples, true, derive_seed(seed, 1))?;
    let opt = optimize_features(&batch, system.eps2_feature, cfg.features.steps, cfg.features.lr)?;
    Ok(FeatureStage { gm: opt.statistics, objectives: Some((opt.initial_objective, opt.final_objective)) })
}

/// Training channels at one operating point, all noise levels.
pub fn training_set(cfg: &ExperimentConfig, gm: &GmModel, slots: usize, snr_db: f64) -> Result<TrainingSet> {
    let scenario = cfg.scenario(slots, snr_db);
    let seed = stage_seed(cfg, stream::TRAIN_CHANNELS);
    let channels = (0..cfg.unfolded.train_channels).map(|i| scenario.channel(derive_seed(seed, i as u64))).collect::<Result<Vec<_>>>()?;
    TrainingSet::new(&scenario.config, gm, &channels, &cfg.train_sigmas(snr_db), scenario.config.eps2_precoding)
}

fn spsa(steps: usize, initial_step: f64, perturbation: f64) -> SpsaConfig {
    SpsaConfig { steps, initial_step, perturbation, ..SpsaConfig::default() }
}

/// Anchors an unfolded network to its base algorithm on the training
/// channels, then trains it on the mean rate reduction.
pub fn pretrain_precoder(cfg: &ExperimentConfig, gm: &GmModel, kind: SolverKind, slots: usize, snr_db: f64) -> Result<TrainOutcome> {
    let variant =
        kind.variant().ok_or_else(|| taskcomm::Error::InvalidConfig(format!("solver {} has no trainable parameters", kind.name())))?;
    let set = training_set(cfg, gm, slots, snr_db)?;
    let problems = set.problems()?;
    let u = &cfg.unfolded;
    let net = anchored_net(variant, &problems, &set.inits, u.layers, u.mm_sublayers)?;
    train_unfolded(&net, &set, &spsa(u.steps, u.initial_step, u.perturbation), stage_seed(cfg, stream::PRETRAIN))
}

/// End-to-end fine-tuning on the first `finetune.channels` training
/// channels; `None` when disabled.
pub fn finetune(cfg: &ExperimentConfig, gm: &GmModel, net: &UnfoldedNet, slots: usize, snr_db: f64) -> Result<Option<FinetuneOutcome>> {
    let f = &cfg.finetune;
    if f.steps == 0 {
        return Ok(None);
    }
    let full = training_set(cfg, gm, slots, snr_db)?;
    let n = f.channels.min(full.channels.len());
    let set = TrainingSet::new(&full.config, gm, &full.channels[..n], &full.noise_levels, full.config.eps2_precoding)?;
    let seed = stage_seed(cfg, stream::FINETUNE);
    let features = sample_features(gm, f.samples, false, derive_seed(seed, 0))?;
    e2e_finetune(net, &set, &features, &spsa(f.steps, f.initial_step, f.perturbation), derive_seed(seed, 1)).map(Some)
}

pub fn monte_carlo(cfg: &ExperimentConfig) -> MonteCarlo {
    MonteCarlo {
        channels: cfg.evaluation.channels,
        samples_per_channel: cfg.evaluation.samples_per_channel,
        noise_draws: cfg.evaluation.noise_draws,
    }
}

pub fn evaluate(cfg: &ExperimentConfig, gm: &GmModel, precoding: &Precoding, slots: usize, snr_db: f64) -> Result<AccuracyStats> {
    evaluate_accuracy(precoding, gm, &cfg.scenario(slots, snr_db), &monte_carlo(cfg), stage_seed(cfg, stream::EVALUATION))
}

/// Algorithmic precoding for `kind`; unfolded solvers need a network.
pub fn precoding(cfg: &ExperimentConfig, kind: SolverKind, net: Option<UnfoldedNet>) -> Result<Precoding> {
    let s = &cfg.solver;
    Ok(match kind {
        SolverKind::Bca => Precoding::Bca { max_iters: s.max_iters, tol: s.tol },
        SolverKind::BcaMm => Precoding::BcaMm { max_iters: s.max_iters, inner_iters: s.inner_iters, tol: s.tol },
        SolverKind::Identity => Precoding::Identity,
        SolverKind::DuBca | SolverKind::DuBcaMm => match net {
            Some(net) if Some(net.variant) == kind.variant() => Precoding::Unfolded(Box::new(net)),
            Some(net) => {
                return Err(taskcomm::Error::Artifact(format!(
                    "network variant {} does not match solver {}",
                    net.variant.name(),
                    kind.name()
                )))
            }
            None => return Err(taskcomm::Error::InvalidConfig(format!("solver {} needs a trained network", kind.name()))),
        },
    })
}

/// `(L, I)` as reported in the results: outer iterations or layers, and MM
/// inner iterations or sub-layers (0 where not applicable).
pub fn depth(cfg: &ExperimentConfig, kind: SolverKind) -> (usize, usize) {
    match kind {
        SolverKind::Bca => (cfg.solver.max_iters, 0),
        SolverKind::BcaMm => (cfg.solver.max_iters, cfg.solver.inner_iters),
        SolverKind::DuBca => (cfg.unfolded.layers, 0),
        SolverKind::DuBcaMm => (cfg.unfolded.layers, cfg.unfolded.mm_sublayers),
        SolverKind::Identity => (0, 0),
    }
}

/// Everything produced at one operating point for one solver.
#[derive(Debug, Clone)]
pub struct PointOutcome {
    pub kind: SolverKind,
    pub slots: usize,
    pub snr_db: f64,
    pub pretrain: Option<TrainOutcome>,
    pub finetune: Option<FinetuneOutcome>,
    /// Network used for evaluation (after fine-tuning when enabled).
    pub net: Option<UnfoldedNet>,
    pub stats: AccuracyStats,
    pub wall_ms: u128,
}

/// Trains (if needed) and evaluates `kind` at one operating point.
pub fn run_point(cfg: &ExperimentConfig, gm: &GmModel, kind: SolverKind, slots: usize, snr_db: f64) -> Result<PointOutcome> {
    let start = Instant::now();
    let mut pretrain = None;
    let mut tuned = None;
    let mut net = None;
    if kind.variant().is_some() {
        let trained = pretrain_precoder(cfg, gm, kind, slots, snr_db)?;
        tuned = finetune(cfg, gm, &trained.net, slots, snr_db)?;
        net = Some(tuned.as_ref().map_or_else(|| trained.net.clone(), |t| t.net.clone()));
        pretrain = Some(trained);
    }
    let stats = evaluate(cfg, gm, &precoding(cfg, kind, net.clone())?, slots, snr_db)?;
    Ok(PointOutcome { kind, slots, snr_db, pretrain, finetune: tuned, net, stats, wall_ms: start.elapsed().as_millis() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.features.steps = 0;
        cfg.unfolded.train_channels = 3;
        cfg.unfolded.layers = 1;
        cfg.unfolded.steps = 4;
        cfg.finetune.steps = 3;
        cfg.finetune.samples = 30;
        cfg.finetune.channels = 2;
        cfg.evaluation.channels = 3;
        cfg.evaluation.samples_per_channel = 20;
        cfg
    }

    #[test]
    fn evaluation_channels_do_not_depend_on_the_solver() {
        let cfg = small();
        let gm = pretrain_features(&cfg).unwrap().gm;
        let a = run_point(&cfg, &gm, SolverKind::Identity, 1, 6.0).unwrap();
        let b = run_point(&cfg, &gm, SolverKind::Identity, 1, 6.0).unwrap();
        assert_eq!(a.stats, b.stats);
        let c = run_point(&cfg, &gm, SolverKind::DuBcaMm, 1, 6.0).unwrap();
        assert!(c.pretrain.is_some() && c.finetune.is_some());
        assert_eq!(c.stats.per_channel.len(), 3);
    }

    #[test]
    fn feature_stage_keeps_the_system_dimensions() {
        let mut cfg = small();
        cfg.features.steps = 5;
        cfg.features.samples = 60;
        let stage = pretrain_features(&cfg).unwrap();
        assert_eq!(stage.gm.dim(), 4);
        let (before, after) = stage.objectives.unwrap();
        assert!(after >= before);
    }

    #[test]
    fn unfolded_solvers_require_a_matching_network() {
        let cfg = small();
        assert!(precoding(&cfg, SolverKind::DuBca, None).is_err());
        let net = UnfoldedNet::blank(taskcomm::Variant::DuBcaMm, &cfg.system_config(1, 6.0), 1, 1).unwrap();
        assert!(precoding(&cfg, SolverKind::DuBca, Some(net.clone())).is_err());
        assert!(precoding(&cfg, SolverKind::DuBcaMm, Some(net)).is_ok());
    }
}
