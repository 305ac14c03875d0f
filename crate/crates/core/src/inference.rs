//! MAP classification of received signals, the end-to-end cross-entropy
//! loss, and Monte-Carlo accuracy evaluation.
//!
//! Under the Gaussian-mixture model the received vector of class `j` is
//! `CN(0, C_j)` with `C_j = H V Σ_j Vᴴ Hᴴ + σ² I`, so the Bayes-optimal rule
//! compares `ln p_j − rᴴ C_j⁻¹ r − ln det(π C_j)`. Everything is computed in
//! the log domain.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bca::{bca_solve, PrecodingProblem, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::mcr2::channel_mcr2;
use crate::mm::{bca_mm_solve, DEFAULT_INNER_ITERS};
use crate::model::{
    effective_channel, received_cov, sample_features, transmit, ChannelState, FeatureBatch, GmModel, PrecoderSet, Scenario, SystemConfig,
};
use crate::numerics::{identity, norm_sqr, pairwise_sum, CMatrix, Cholesky};
use crate::seed::{complex_gaussian, derive_seed, rng};
use crate::unfolded::{channel_init, du_forward, UnfoldedNet};

/// Per-class Cholesky factors of the received covariances for one
/// `(precoder, channel)` pair.
#[derive(Debug, Clone)]
pub struct MapClassifier {
    factors: Vec<Cholesky>,
    /// `ln p_j − ln det(π C_j)`.
    offsets: Vec<f64>,
}

impl MapClassifier {
    pub fn new(precoders: &PrecoderSet, ch: &ChannelState, gm: &GmModel) -> Result<Self> {
        let hv = effective_channel(precoders, ch);
        if hv.ncols() != gm.dim() {
            return Err(Error::DimensionMismatch {
                op: "MapClassifier",
                expected: format!("feature dim {}", gm.dim()),
                found: format!("{}", hv.ncols()),
            });
        }
        let n = hv.nrows() as f64;
        let noise = identity(hv.nrows()).scale(ch.noise_var());
        let mut factors = Vec::with_capacity(gm.num_classes());
        let mut offsets = Vec::with_capacity(gm.num_classes());
        for (j, p) in gm.priors().iter().enumerate() {
            let chol = Cholesky::new(&(received_cov(&hv, gm.class_cov(j)) + &noise))?;
            offsets.push(p.ln() - chol.logdet() - n * PI.ln());
            factors.push(chol);
        }
        Ok(Self { factors, offsets })
    }

    pub fn num_classes(&self) -> usize {
        self.factors.len()
    }

    /// `ln p_j + ln CN(r; 0, C_j)` for a single received column.
    pub fn log_posteriors(&self, r: &CMatrix) -> Vec<f64> {
        self.factors.iter().zip(&self.offsets).map(|(chol, off)| off - norm_sqr(&chol.forward(r))).collect()
    }

    pub fn classify(&self, r: &CMatrix) -> usize {
        argmax(&self.log_posteriors(r))
    }
}

/// Index of the largest entry; ties go to the lowest index. NaN never wins.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] || values[best].is_nan() && !v.is_nan() {
            best = j;
        }
    }
    best
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY || !top.is_finite() {
        return top;
    }
    top + values.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

/// Log-posteriors shifted so that their exponentials sum to one.
pub fn normalize_log_posteriors(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|v| v - lse).collect()
}

pub fn class_log_posteriors(r: &CMatrix, precoders: &PrecoderSet, ch: &ChannelState, gm: &GmModel) -> Result<Vec<f64>> {
    Ok(MapClassifier::new(precoders, ch, gm)?.log_posteriors(r))
}

pub fn map_classify(r: &CMatrix, precoders: &PrecoderSet, ch: &ChannelState, gm: &GmModel) -> Result<usize> {
    Ok(MapClassifier::new(precoders, ch, gm)?.classify(r))
}

/// Noise column for sample `m`, noise level `e`, draw `f`: seeded
/// independently per grid index so the loss can be re-summed in any order.
pub fn loss_noise(seed: u64, index: u64, rx_dim: usize, sigma: f64) -> CMatrix {
    complex_gaussian(&mut rng(derive_seed(seed, index)), rx_dim, 1).scale(sigma)
}

/// Empirical cross-entropy of the MAP posterior with `draws` noise
/// realizations per sample. Sample `m` is paired with channel `m mod N`;
/// `precoders[n * E + e]` serves channel `n` at noise level `e`.
pub fn e2e_loss_with_draws(
    features: &FeatureBatch,
    precoders: &[PrecoderSet],
    channels: &[ChannelState],
    noise_levels: &[f64],
    gm: &GmModel,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let (n_ch, n_e) = (channels.len(), noise_levels.len());
    if n_ch == 0 || n_e == 0 || features.is_empty() || draws == 0 {
        return Err(Error::InvalidConfig("loss needs samples, channels, noise levels and draws".into()));
    }
    if precoders.len() != n_ch * n_e {
        return Err(Error::DimensionMismatch {
            op: "e2e_loss",
            expected: format!("{} precoder sets", n_ch * n_e),
            found: format!("{}", precoders.len()),
        });
    }
    if features.classes != gm.num_classes() {
        return Err(Error::InvalidConfig("feature labels and model disagree on the class count".into()));
    }
    let classifiers = (0..n_ch * n_e)
        .into_par_iter()
        .map(|i| {
            let ch = channels[i / n_e].with_sigma(noise_levels[i % n_e]);
            let clean = effective_channel(&precoders[i], &ch);
            Ok((MapClassifier::new(&precoders[i], &ch, gm)?, clean))
        })
        .collect::<Result<Vec<_>>>()?;
    let terms: Vec<f64> = (0..features.len())
        .into_par_iter()
        .flat_map_iter(|m| {
            let z = features.samples.columns(m, 1).into_owned();
            let y = features.labels[m];
            let n = m % n_ch;
            let classifiers = &classifiers;
            (0..n_e).flat_map(move |e| {
                let (clf, hv) = &classifiers[n * n_e + e];
                let signal = hv * &z;
                let noise_base = ((m * n_e + e) * draws) as u64;
                let sigma = noise_levels[e];
                (0..draws).map(move |f| {
                    let r = &signal + loss_noise(seed, noise_base + f as u64, signal.nrows(), sigma);
                    let post = clf.log_posteriors(&r);
                    // −ln posterior of the true class, clamped at zero against roundoff.
                    (log_sum_exp(&post) - post[y]).max(0.0)
                })
            })
        })
        .collect();
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

/// [`e2e_loss_with_draws`] with one noise draw per sample.
pub fn e2e_loss(
    features: &FeatureBatch,
    precoders: &[PrecoderSet],
    channels: &[ChannelState],
    noise_levels: &[f64],
    gm: &GmModel,
    seed: u64,
) -> Result<f64> {
    e2e_loss_with_draws(features, precoders, channels, noise_levels, gm, 1, seed)
}

/// How precoders are obtained for each sampled channel.
#[derive(Debug, Clone)]
pub enum Precoding {
    Bca {
        max_iters: usize,
        tol: f64,
    },
    BcaMm {
        max_iters: usize,
        inner_iters: usize,
        tol: f64,
    },
    Unfolded(Box<UnfoldedNet>),
    /// Zero-padded identity scaled to the power budget.
    Identity,
}

impl Precoding {
    pub fn bca() -> Self {
        Precoding::Bca { max_iters: DEFAULT_MAX_ITERS, tol: DEFAULT_TOL }
    }

    pub fn bca_mm() -> Self {
        Precoding::BcaMm { max_iters: DEFAULT_MAX_ITERS, inner_iters: DEFAULT_INNER_ITERS, tol: DEFAULT_TOL }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Precoding::Bca { .. } => "bca",
            Precoding::BcaMm { .. } => "bca-mm",
            Precoding::Unfolded(net) => net.variant.name(),
            Precoding::Identity => "identity",
        }
    }

    /// Precoders for one channel, started from the channel-keyed initializer.
    pub fn compute(&self, config: &SystemConfig, gm: &GmModel, ch: &ChannelState) -> Result<PrecoderSet> {
        if matches!(self, Precoding::Identity) {
            return Ok(PrecoderSet::identity_like(config, gm));
        }
        let problem = PrecodingProblem::new(config, gm, ch)?;
        let init = channel_init(config, gm, ch);
        match self {
            Precoding::Bca { max_iters, tol } => Ok(bca_solve(&problem, &init, *max_iters, *tol)?.precoders),
            Precoding::BcaMm { max_iters, inner_iters, tol } => {
                Ok(bca_mm_solve(&problem, &init, *max_iters, *inner_iters, *tol)?.precoders)
            }
            Precoding::Unfolded(net) => du_forward(net, &problem, &init),
            Precoding::Identity => unreachable!("handled above"),
        }
    }
}

/// Monte-Carlo sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub channels: usize,
    pub samples_per_channel: usize,
    /// Noise realizations per feature sample.
    pub noise_draws: usize,
}

impl MonteCarlo {
    pub fn new(channels: usize, samples_per_channel: usize) -> Self {
        Self { channels, samples_per_channel, noise_draws: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStats {
    pub mean: f64,
    /// Standard error of `mean` across channels (binomial when only one
    /// channel is drawn).
    pub stderr: f64,
    pub per_channel: Vec<f64>,
    /// Mean rate reduction of the precoders used.
    pub objective_mean: f64,
}

/// Seeds of channel `c`: realization, features, noise.
fn channel_seeds(seed: u64, c: usize) -> [u64; 3] {
    let base = derive_seed(seed, c as u64);
    [derive_seed(base, 0), derive_seed(base, 1), derive_seed(base, 2)]
}

/// Channel `c` of an evaluation run; identical across precoding schemes so
/// comparisons are paired.
pub fn evaluation_channel(scenario: &Scenario, seed: u64, c: usize) -> Result<ChannelState> {
    scenario.channel(channel_seeds(seed, c)[0])
}

/// Accuracy of one precoder on one channel with seeded features and noise.
pub fn channel_accuracy(
    precoders: &PrecoderSet,
    ch: &ChannelState,
    gm: &GmModel,
    mc: &MonteCarlo,
    feature_seed: u64,
    noise_seed: u64,
) -> Result<f64> {
    let clf = MapClassifier::new(precoders, ch, gm)?;
    let features = sample_features(gm, mc.samples_per_channel, false, feature_seed)?;
    let mut noise = rng(noise_seed);
    let mut correct = 0usize;
    for _ in 0..mc.noise_draws {
        let received = transmit(&features.samples, precoders, ch, &mut noise)?;
        for (m, &y) in features.labels.iter().enumerate() {
            if clf.classify(&received.columns(m, 1).into_owned()) == y {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / (mc.samples_per_channel * mc.noise_draws) as f64)
}

/// Sample channel, compute precoders, sample features, transmit, classify.
/// Channels run in parallel; results are aggregated in channel order.
pub fn evaluate_accuracy(precoding: &Precoding, gm: &GmModel, scenario: &Scenario, mc: &MonteCarlo, seed: u64) -> Result<AccuracyStats> {
    if mc.channels == 0 || mc.samples_per_channel == 0 || mc.noise_draws == 0 {
        return Err(Error::InvalidConfig("evaluation needs channels, samples and noise draws".into()));
    }
    let config = &scenario.config;
    let per_channel = (0..mc.channels)
        .into_par_iter()
        .map(|c| {
            let [ch_seed, feature_seed, noise_seed] = channel_seeds(seed, c);
            let ch = scenario.channel(ch_seed)?;
            let v = precoding.compute(config, gm, &ch)?;
            let objective = channel_mcr2(&v, &ch, gm, config.eps2_precoding)?;
            Ok((channel_accuracy(&v, &ch, gm, mc, feature_seed, noise_seed)?, objective))
        })
        .collect::<Result<Vec<_>>>()?;
    let (acc, obj): (Vec<f64>, Vec<f64>) = per_channel.into_iter().unzip();
    let mean = pairwise_sum(&acc) / acc.len() as f64;
    let stderr = if acc.len() > 1 {
        let var = acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (acc.len() - 1) as f64;
        (var / acc.len() as f64).sqrt()
    } else {
        (mean * (1.0 - mean) / (mc.samples_per_channel * mc.noise_draws) as f64).sqrt()
    };
    Ok(AccuracyStats { mean, stderr, per_channel: acc, objective_mean: pairwise_sum(&obj) / obj.len() as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_gm_model, HermitianPsd, RicianParams};
    use crate::numerics::{c, diag_real};
    use crate::testutil::physical_instance;
    use nalgebra::DMatrix;

    fn scalar_setup(c1: f64, c2: f64) -> (PrecoderSet, ChannelState, GmModel) {
        // One device, one antenna, unit channel; σ² = 0.5 so the class
        // variances become c1, c2 after adding noise.
        let gm = GmModel::new(
            vec![0.5, 0.5],
            vec![HermitianPsd::new(diag_real(&[c1 - 0.5])).unwrap(), HermitianPsd::new(diag_real(&[c2 - 0.5])).unwrap()],
        )
        .unwrap();
        let ch = ChannelState::new(vec![diag_real(&[1.0])], 0.5f64.sqrt()).unwrap();
        (PrecoderSet { blocks: vec![diag_real(&[1.0])] }, ch, gm)
    }

    #[test]
    fn scalar_hand_example() {
        let (v, ch, gm) = scalar_setup(2.0, 1.0);
        let r = CMatrix::from_element(1, 1, c(3f64.sqrt(), 0.0));
        let post = class_log_posteriors(&r, &v, &ch, &gm).unwrap();
        // ln ½ − |r|²/c − ln(π c)
        let expect = [0.5f64.ln() - 1.5 - (2.0 * PI).ln(), 0.5f64.ln() - 3.0 - PI.ln()];
        for (a, b) in post.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(map_classify(&r, &v, &ch, &gm).unwrap(), 0);
    }

    #[test]
    fn ties_break_toward_the_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[f64::NAN, -1.0]), 1);
        let (v, ch, gm) = scalar_setup(1.5, 1.5);
        let r = CMatrix::from_element(1, 1, c(0.3, -0.2));
        assert_eq!(map_classify(&r, &v, &ch, &gm).unwrap(), 0);
    }

    #[test]
    fn single_class_always_wins_and_has_zero_loss() {
        let (cfg, _, ch) = physical_instance(1, 2, 2, 2, 3, 2, 2, 6.0);
        let mut one = cfg.clone();
        one.classes = 1;
        let gm = make_gm_model(&one, 2, 4).unwrap();
        let v = channel_init(&one, &gm, &ch);
        let feats = sample_features(&gm, 20, false, 3).unwrap();
        let loss = e2e_loss(&feats, std::slice::from_ref(&v), std::slice::from_ref(&ch), &[ch.sigma], &gm, 9).unwrap();
        assert_eq!(loss, 0.0);
        let r = complex_gaussian(&mut rng(2), ch.rx_dim(), 1);
        assert_eq!(map_classify(&r, &v, &ch, &gm).unwrap(), 0);
    }

    #[test]
    fn posteriors_normalize_and_shift_invariance_holds() {
        let (cfg, gm, ch) = physical_instance(2, 2, 2, 2, 3, 3, 2, 6.0);
        let v = channel_init(&cfg, &gm, &ch);
        let mut r = rng(5);
        for _ in 0..50 {
            let received = complex_gaussian(&mut r, ch.rx_dim(), 1).scale(1e-4);
            let post = class_log_posteriors(&received, &v, &ch, &gm).unwrap();
            let total: f64 = normalize_log_posteriors(&post).iter().map(|p| p.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = post.iter().map(|p| p + 1234.5).collect();
            assert_eq!(argmax(&shifted), argmax(&post));
        }
    }

    #[test]
    fn identical_classes_give_ln_j() {
        let (cfg, _, ch) = physical_instance(3, 2, 2, 2, 3, 3, 2, 6.0);
        let base = make_gm_model(&cfg, 2, 8).unwrap();
        let same = HermitianPsd::new(base.class_cov(0).clone()).unwrap();
        let gm = GmModel::new(vec![1.0 / 3.0; 3], vec![same.clone(), same.clone(), same]).unwrap();
        let v = channel_init(&cfg, &gm, &ch);
        let feats = sample_features(&gm, 30, false, 1).unwrap();
        let loss = e2e_loss(&feats, std::slice::from_ref(&v), std::slice::from_ref(&ch), &[ch.sigma], &gm, 2).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-10, "{loss}");
    }

    /// Dense re-implementation: explicit inverse and determinant per class,
    /// plain nested loops over samples, noise levels, draws and classes.
    fn reference_loss(
        feats: &FeatureBatch,
        precoders: &[PrecoderSet],
        channels: &[ChannelState],
        levels: &[f64],
        gm: &GmModel,
        draws: usize,
        seed: u64,
    ) -> f64 {
        let (n_ch, n_e) = (channels.len(), levels.len());
        let mut total = 0.0;
        let mut count = 0;
        for m in 0..feats.len() {
            let n = m % n_ch;
            for e in 0..n_e {
                let v = &precoders[n * n_e + e];
                let ch = channels[n].with_sigma(levels[e]);
                let hv = ch.assembled() * v.block_diag();
                let signal = &hv * feats.samples.columns(m, 1);
                for f in 0..draws {
                    let idx = ((m * n_e + e) * draws + f) as u64;
                    let r = &signal + loss_noise(seed, idx, hv.nrows(), levels[e]);
                    let mut logs = Vec::new();
                    for j in 0..gm.num_classes() {
                        let cj: DMatrix<_> = &hv * gm.class_cov(j) * hv.adjoint() + identity(hv.nrows()).scale(levels[e].powi(2));
                        let det = cj.clone().lu().determinant().re;
                        let quad = (r.adjoint() * cj.try_inverse().unwrap() * &r)[(0, 0)].re;
                        logs.push(gm.priors()[j].ln() - quad - (PI.powi(hv.nrows() as i32) * det).ln());
                    }
                    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
                    total += lse - logs[feats.labels[m]];
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn loss_matches_nested_loop_reference() {
        // Normalized scale so the dense determinant stays representable.
        let cfg = SystemConfig::uniform(2, 3, 2, 2, 3, 1, 1.0);
        let gm = make_gm_model(&cfg, 2, 6).unwrap();
        let rician = RicianParams::default().with_pathloss_db(0.0);
        let channels: Vec<_> = (0..3).map(|s| crate::model::sample_channel(&rician, &cfg, 0.5, s).unwrap()).collect();
        let levels = [0.3, 0.6];
        let precoders: Vec<_> = (0..6).map(|i| PrecoderSet::random_feasible(&cfg, &gm, 40 + i)).collect();
        let feats = sample_features(&gm, 11, false, 12).unwrap();
        for draws in [1, 2] {
            let fast = e2e_loss_with_draws(&feats, &precoders, &channels, &levels, &gm, draws, 77).unwrap();
            let slow = reference_loss(&feats, &precoders, &channels, &levels, &gm, draws, 77);
            assert!((fast - slow).abs() < 1e-12 * slow.abs().max(1.0), "{fast} vs {slow}");
            assert!(fast >= 0.0);
        }
    }

    #[test]
    fn near_noiseless_orthogonal_classes_are_separable() {
        // Orthogonal rank-1 classes through an identity channel.
        let cfg = SystemConfig::uniform(1, 2, 2, 2, 2, 1, 1.0);
        let gm = GmModel::new(
            vec![0.5, 0.5],
            vec![HermitianPsd::new(diag_real(&[1.0, 0.0])).unwrap(), HermitianPsd::new(diag_real(&[0.0, 1.0])).unwrap()],
        )
        .unwrap();
        let ch = ChannelState::new(vec![identity(2)], 1e-4).unwrap();
        let v = PrecoderSet::identity_like(&cfg, &gm);
        let mc = MonteCarlo::new(1, 10_000);
        let acc = channel_accuracy(&v, &ch, &gm, &mc, 1, 2).unwrap();
        assert!(acc >= 0.999, "{acc}");
    }

    #[test]
    fn indistinguishable_classes_give_chance_accuracy() {
        let cfg = SystemConfig::uniform(2, 2, 2, 2, 3, 1, 1.0);
        let base = make_gm_model(&cfg, 2, 3).unwrap();
        let same = HermitianPsd::new(base.class_cov(0).clone()).unwrap();
        let gm = GmModel::new(vec![0.5, 0.5], vec![same.clone(), same]).unwrap();
        let scenario = Scenario::at_snr(cfg, RicianParams::default(), crate::model::DEFAULT_NOISE_DBM, 6.0);
        let stats = evaluate_accuracy(&Precoding::Identity, &gm, &scenario, &MonteCarlo::new(20, 200), 4).unwrap();
        // Ties go to class 0, so the classifier always answers 0 and is right
        // exactly when the label is 0.
        assert!((stats.mean - 0.5).abs() <= 3.0 * stats.stderr, "{stats:?}");
    }

    #[test]
    fn evaluation_is_deterministic_and_parallel_safe() {
        let (cfg, gm, _) = physical_instance(5, 2, 2, 2, 3, 2, 2, 6.0);
        let scenario = Scenario::at_snr(cfg, RicianParams::default(), crate::model::DEFAULT_NOISE_DBM, 6.0);
        let mc = MonteCarlo::new(6, 40);
        let a = evaluate_accuracy(&Precoding::bca_mm(), &gm, &scenario, &mc, 11).unwrap();
        let b = evaluate_accuracy(&Precoding::bca_mm(), &gm, &scenario, &mc, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.per_channel.len(), 6);
        let ch = evaluation_channel(&scenario, 11, 3).unwrap();
        let v = Precoding::bca_mm().compute(&scenario.config, &gm, &ch).unwrap();
        let [_, fs, ns] = channel_seeds(11, 3);
        assert_eq!(channel_accuracy(&v, &ch, &gm, &mc, fs, ns).unwrap(), a.per_channel[3]);
    }
}
