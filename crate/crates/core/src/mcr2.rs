//! Coding-rate-reduction objectives.
//!
//! The feature-side objective works on samples,
//!
//! ```text
//! ΔR(Z;Y) = log det(I + D/(M ε²) Z Z^H) − Σ_j (M_j/M) log det(I + D/(M_j ε²) Z_j Z_j^H)
//! ```
//!
//! while the channel-side objective only needs the mixture statistics:
//!
//! ```text
//! ΔR(R;Y|S) = log det(γI + α H V Σ V^H H^H) − Σ_j p_j log det(γI + α H V Σ_j V^H H^H)
//! ```
//!
//! with `α = O N_r / ε²` and `γ = 1 + α σ²`.

use crate::error::{Error, Result};
use crate::model::{effective_channel, received_cov, ChannelState, FeatureBatch, GmModel, PrecoderSet};
use crate::numerics::{hermitian_part, hermitian_solve, identity, logdet_hpd, pairwise_sum, CMatrix};

fn coding_rate(z: &CMatrix, scale: f64) -> Result<f64> {
    let d = z.nrows();
    logdet_hpd(&hermitian_part(&(identity(d) + (z * z.adjoint()).scale(scale))))
}

fn check_classes(batch: &FeatureBatch) -> Result<Vec<usize>> {
    let counts = batch.class_counts();
    if batch.is_empty() {
        return Err(Error::EmptyClass(0));
    }
    if let Some(j) = counts.iter().position(|&m| m == 0) {
        return Err(Error::EmptyClass(j));
    }
    Ok(counts)
}

/// Empirical feature-side rate reduction, evaluated in the `D x D` Gram domain.
pub fn feature_mcr2(batch: &FeatureBatch, eps2: f64) -> Result<f64> {
    let counts = check_classes(batch)?;
    let (d, m) = (batch.dim() as f64, batch.len() as f64);
    let mut value = coding_rate(&batch.samples, d / (m * eps2))?;
    for (j, &mj) in counts.iter().enumerate() {
        let zj = batch.class_samples(j);
        value -= (mj as f64 / m) * coding_rate(&zj, d / (mj as f64 * eps2))?;
    }
    Ok(value)
}

/// Wirtinger gradient `∂ΔR/∂conj(Z)` (`D x M`).
///
/// For a real perturbation `Z + h E_mn` the directional derivative is
/// `2 Re G_mn`; for `Z + i h E_mn` it is `2 Im G_mn`.
pub fn feature_mcr2_grad(batch: &FeatureBatch, eps2: f64) -> Result<CMatrix> {
    let counts = check_classes(batch)?;
    let (d, m) = (batch.dim(), batch.len() as f64);
    let a = d as f64 / (m * eps2);
    let z = &batch.samples;
    let gram = hermitian_part(&(identity(d) + (z * z.adjoint()).scale(a)));
    let mut grad = hermitian_solve(&gram, z)?.scale(a);
    // (M_j/M) * (D/(M_j ε²)) collapses to the global coefficient `a`
    for (j, &mj) in counts.iter().enumerate() {
        let idx = batch.class_indices(j);
        let zj = batch.class_samples(j);
        let aj = d as f64 / (mj as f64 * eps2);
        let gram_j = hermitian_part(&(identity(d) + (&zj * zj.adjoint()).scale(aj)));
        let gj = hermitian_solve(&gram_j, &zj)?.scale(a);
        for (col, &mcol) in idx.iter().enumerate() {
            let mut dst = grad.column_mut(mcol);
            dst -= gj.column(col);
        }
    }
    Ok(grad)
}

/// Result of projected-ascent feature optimization.
#[derive(Debug, Clone)]
pub struct FeatureOptimization {
    pub batch: FeatureBatch,
    /// `Σ = Z Z^H / M`, `Σ_j = Z_j Z_j^H / M_j`, priors `M_j / M`.
    pub statistics: GmModel,
    pub initial_objective: f64,
    pub final_objective: f64,
}

/// Projected gradient ascent on the unit sphere: `Z ← normalize(Z + lr ∇)`.
pub fn optimize_features(init: &FeatureBatch, eps2: f64, steps: usize, lr: f64) -> Result<FeatureOptimization> {
    let initial_objective = feature_mcr2(init, eps2)?;
    let mut batch = init.clone();
    for _ in 0..steps {
        let g = feature_mcr2_grad(&batch, eps2)?;
        batch.samples += g.scale(lr);
        batch.normalize()?;
    }
    let final_objective = feature_mcr2(&batch, eps2)?;
    let statistics = batch.statistics()?;
    Ok(FeatureOptimization { batch, statistics, initial_objective, final_objective })
}

/// Channel-side rate reduction for one `(H, σ)` state.
pub fn channel_mcr2(precoders: &PrecoderSet, ch: &ChannelState, gm: &GmModel, eps2: f64) -> Result<f64> {
    let n = ch.rx_dim();
    let alpha = n as f64 / eps2;
    let gamma = 1.0 + alpha * ch.noise_var();
    let hv = effective_channel(precoders, ch);
    let base = identity(n).scale(gamma);
    let mut value = logdet_hpd(&(&base + received_cov(&hv, gm.global_cov()).scale(alpha)))?;
    for (p, s) in gm.priors().iter().zip(gm.class_covs()) {
        value -= p * logdet_hpd(&(&base + received_cov(&hv, s).scale(alpha)))?;
    }
    Ok(value)
}

/// Mean of [`channel_mcr2`] over the `N x E` grid of channels and noise levels.
///
/// `precoders[n * E + e]` belongs to channel `n` at noise level `e`.
pub fn channel_mcr2_batch(
    precoders: &[PrecoderSet],
    channels: &[ChannelState],
    noise_levels: &[f64],
    gm: &GmModel,
    eps2: f64,
) -> Result<f64> {
    let e = noise_levels.len();
    if precoders.len() != channels.len() * e || e == 0 {
        return Err(Error::DimensionMismatch {
            op: "channel_mcr2_batch",
            expected: format!("{} precoders", channels.len() * e),
            found: format!("{}", precoders.len()),
        });
    }
    let mut values = Vec::with_capacity(precoders.len());
    for (n, ch) in channels.iter().enumerate() {
        for (ei, &sigma) in noise_levels.iter().enumerate() {
            values.push(channel_mcr2(&precoders[n * e + ei], &ch.with_sigma(sigma), gm, eps2)?);
        }
    }
    Ok(pairwise_sum(&values) / values.len() as f64)
}
