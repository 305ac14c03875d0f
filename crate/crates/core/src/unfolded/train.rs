use rayon::prelude::*;

use crate::bca::PrecodingProblem;
use crate::error::{Error, Result};
use crate::inference::e2e_loss;
use crate::model::{ChannelState, FeatureBatch, GmModel, PrecoderSet, SystemConfig};
use crate::numerics::pairwise_sum;

use super::forward::{channel_init, du_forward};
use super::params::UnfoldedNet;
use super::spsa::{spsa_maximize, SpsaConfig, SpsaOutcome};

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: UnfoldedNet,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub evaluations: usize,
}

/// The `(channel, noise level)` grid a network is trained or evaluated on,
/// with the deterministic per-channel initial precoders.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub config: SystemConfig,
    pub gm: GmModel,
    pub channels: Vec<ChannelState>,
    pub noise_levels: Vec<f64>,
    pub states: Vec<ChannelState>,
    pub inits: Vec<PrecoderSet>,
}

impl TrainingSet {
    /// Channel `n` at noise level `e` becomes state `n * E + e`.
    pub fn new(config: &SystemConfig, gm: &GmModel, channels: &[ChannelState], noise_levels: &[f64], eps2: f64) -> Result<Self> {
        if channels.is_empty() || noise_levels.is_empty() {
            return Err(Error::InvalidConfig("training needs at least one channel and noise level".into()));
        }
        let mut config = config.clone();
        config.eps2_precoding = eps2;
        let mut states = Vec::with_capacity(channels.len() * noise_levels.len());
        for ch in channels {
            for &sigma in noise_levels {
                states.push(ch.with_sigma(sigma));
            }
        }
        let inits = states.iter().map(|s| channel_init(&config, gm, s)).collect();
        Ok(Self { config, gm: gm.clone(), channels: channels.to_vec(), noise_levels: noise_levels.to_vec(), states, inits })
    }

    pub fn problems(&self) -> Result<Vec<PrecodingProblem<'_>>> {
        self.states.iter().map(|s| PrecodingProblem::new(&self.config, &self.gm, s)).collect()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Mean rate reduction of the network's precoders over the set.
pub fn mean_objective(net: &UnfoldedNet, problems: &[PrecodingProblem], inits: &[PrecoderSet]) -> Result<f64> {
    let values =
        problems.par_iter().zip(inits.par_iter()).map(|(p, v0)| p.objective(&du_forward(net, p, v0)?)).collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&values) / values.len() as f64)
}

/// Runs SPSA on `objective(net)` in coordinates normalized by each
/// parameter block's natural scale, starting from `net`.
pub(crate) fn optimize_net<F>(net: &UnfoldedNet, cfg: &SpsaConfig, seed: u64, objective: F) -> Result<(UnfoldedNet, SpsaOutcome)>
where
    F: Fn(&UnfoldedNet) -> Result<f64> + Sync,
{
    let origin = net.to_vector();
    let scales = net.coordinate_scales();
    let rebuild = |x: &[f64]| -> Result<UnfoldedNet> {
        let theta: Vec<f64> = origin.iter().zip(&scales).zip(x).map(|((o, s), xi)| o + s * xi).collect();
        let mut candidate = net.clone();
        candidate.set_vector(&theta)?;
        Ok(candidate)
    };
    let f = |x: &[f64]| -> f64 { rebuild(x).and_then(|n| objective(&n)).unwrap_or(f64::NAN) };
    let outcome = spsa_maximize(f, &vec![0.0; origin.len()], cfg, seed);
    Ok((rebuild(&outcome.best)?, outcome))
}

/// Pretrains the network on the rate-reduction objective averaged over the
/// training grid.
pub fn train_unfolded(net: &UnfoldedNet, set: &TrainingSet, cfg: &SpsaConfig, seed: u64) -> Result<TrainOutcome> {
    let problems = set.problems()?;
    let initial = mean_objective(net, &problems, &set.inits)?;
    let (trained, outcome) = optimize_net(net, cfg, seed, |n| mean_objective(n, &problems, &set.inits))?;
    let final_objective = mean_objective(&trained, &problems, &set.inits)?;
    debug_assert!(final_objective >= initial || cfg.steps == 0);
    Ok(TrainOutcome { net: trained, initial_objective: initial, final_objective, evaluations: outcome.evaluations })
}

/// Precoders of the network for every state of the set, in grid order.
pub fn forward_all(net: &UnfoldedNet, problems: &[PrecodingProblem], inits: &[PrecoderSet]) -> Result<Vec<PrecoderSet>> {
    problems.par_iter().zip(inits.par_iter()).map(|(p, v0)| du_forward(net, p, v0)).collect()
}

/// End-to-end loss of the network's precoders on a fixed feature batch and
/// noise seed.
pub fn network_e2e_loss(
    net: &UnfoldedNet,
    set: &TrainingSet,
    problems: &[PrecodingProblem],
    features: &FeatureBatch,
    noise_seed: u64,
) -> Result<f64> {
    let precoders = forward_all(net, problems, &set.inits)?;
    e2e_loss(features, &precoders, &set.channels, &set.noise_levels, &set.gm, noise_seed)
}

/// Result of end-to-end fine-tuning.
#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub net: UnfoldedNet,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub evaluations: usize,
}

/// Fine-tunes the precoding network on the classification cross-entropy.
/// Feature sample `m` is paired with channel `m mod N` at every noise level;
/// the noise realizations are fixed by `seed` so every candidate is scored on
/// the same draws.
pub fn e2e_finetune(net: &UnfoldedNet, set: &TrainingSet, features: &FeatureBatch, cfg: &SpsaConfig, seed: u64) -> Result<FinetuneOutcome> {
    let problems = set.problems()?;
    let noise_seed = crate::seed::derive_seed(seed, 0);
    let loss = |n: &UnfoldedNet| network_e2e_loss(n, set, &problems, features, noise_seed);
    let initial_loss = loss(net)?;
    let (tuned, outcome) = optimize_net(net, cfg, crate::seed::derive_seed(seed, 1), |n| loss(n).map(|l| -l))?;
    let final_loss = loss(&tuned)?;
    Ok(FinetuneOutcome { net: tuned, initial_loss, final_loss, evaluations: outcome.evaluations })
}
