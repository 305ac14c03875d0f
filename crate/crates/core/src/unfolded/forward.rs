use crate::bca::{v_step_bisection, PrecodingProblem, Weights};
use crate::error::Result;
use crate::mm::{eta_bound, linear_step, mm_update};
use crate::model::{effective_channel, ChannelState, GmModel, PrecoderSet, SystemConfig};
use crate::numerics::{diag_reciprocal, hermitian_part, identity, psd_function, CMatrix, Cholesky, C64};
use crate::seed::derive_seed;

use super::params::{fit_affine_inverse, InverseApproxParams, LayerParams, UnfoldedNet, VUpdateParams, Variant};

/// Deterministic feasible starting precoder for a channel: the seeded random
/// initializer keyed by a hash of the channel entries.
pub fn channel_init(config: &SystemConfig, gm: &GmModel, ch: &ChannelState) -> PrecoderSet {
    PrecoderSet::random_feasible(config, gm, channel_hash(ch))
}

pub fn channel_hash(ch: &ChannelState) -> u64 {
    let mut h = derive_seed(0x7a5c_0111, ch.sigma.to_bits());
    for block in &ch.blocks {
        h = derive_seed(h, ((block.nrows() as u64) << 32) | block.ncols() as u64);
        for z in block.iter() {
            h = derive_seed(h ^ z.re.to_bits(), z.im.to_bits());
        }
    }
    h
}

/// `(N + λI)^‡ Ω₁ + N Ω₂ + Ω₃` for a complex multiplier.
fn shifted_inv_approx(n: &CMatrix, lambda: C64, omega: &InverseApproxParams) -> Result<CMatrix> {
    let shifted = n + identity(n.nrows()) * lambda;
    Ok(diag_reciprocal(&shifted)? * &omega.xi[0] + n * &omega.xi[1] + &omega.xi[2])
}

/// Parameters reproducing `(N + λI)⁻¹` exactly at `N = N₀`:
/// `Ω₁ = 0`, `Ω₂ = −A₀⁻²`, `Ω₃ = 2A₀⁻¹ − λA₀⁻²` with `A₀ = N₀ + λI`.
pub fn shifted_taylor_anchor(a0_inv: &CMatrix, lambda: f64) -> InverseApproxParams {
    let sq = a0_inv * a0_inv;
    let n = a0_inv.nrows();
    InverseApproxParams { xi: [CMatrix::zeros(n, n), -&sq, a0_inv.scale(2.0) - sq.scale(lambda)] }
}

/// Learned U- and W-updates of one layer.
fn learned_blocks(problem: &PrecodingProblem, layer: &LayerParams, v: &PrecoderSet) -> Result<(CMatrix, Weights)> {
    let (f0, fj) = problem.compute_f(v);
    let hv_s = effective_channel(v, problem.ch) * problem.sigma_sqrt();
    let u = (layer.theta.apply(&f0)? * hv_s).scale(problem.alpha);
    let e0 = problem.e0(&u, v);
    let w0 = layer.phi.apply(&e0)?;
    let wj = fj.iter().map(|f| layer.psi.apply(f)).collect::<Result<Vec<_>>>()?;
    Ok((u, Weights { w0, wj }))
}

fn v_update(problem: &PrecodingProblem, layer: &LayerParams, u: &CMatrix, w: &Weights, v: &PrecoderSet) -> Result<PrecoderSet> {
    let mut next = v.clone();
    for k in 0..problem.config.num_devices() {
        let qp = problem.assemble_qcqp(u, w, &next, k);
        match &layer.v_update {
            VUpdateParams::Vanilla { omega, lambda } => {
                let vk = shifted_inv_approx(&qp.n, lambda[(k, 0)], &omega[k])? * &qp.b;
                next.blocks[k] = problem.from_whitened(k, &vk)?;
                project_device(&mut next, k, problem);
            }
            VUpdateParams::Mm { upsilon } => {
                let mut vk = problem.to_whitened(k, &next.blocks[k]);
                let eta = eta_bound(&qp.n);
                if eta == 0.0 {
                    vk = linear_step(&qp.b, qp.power, &vk);
                } else {
                    for ups in &upsilon[k] {
                        vk = mm_update(&qp.b, &qp.n, eta, Some(ups), &vk, qp.power);
                    }
                }
                next.blocks[k] = problem.from_whitened(k, &vk)?;
            }
        }
    }
    Ok(next)
}

/// Rescales device `k` onto its budget when it exceeds it.
fn project_device(v: &mut PrecoderSet, k: usize, problem: &PrecodingProblem) {
    let used = v.power(k, problem.config, problem.gm);
    let budget = problem.config.devices[k].power;
    if used > budget {
        v.blocks[k] = v.blocks[k].scale((budget / used).sqrt());
    }
}

/// One layer of the unfolded network.
pub fn layer_forward(problem: &PrecodingProblem, layer: &LayerParams, v: &PrecoderSet) -> Result<PrecoderSet> {
    let (u, w) = learned_blocks(problem, layer, v)?;
    v_update(problem, layer, &u, &w, v)
}

/// Runs all layers from `v_init`.
pub fn du_forward(net: &UnfoldedNet, problem: &PrecodingProblem, v_init: &PrecoderSet) -> Result<PrecoderSet> {
    v_init.check(problem.config)?;
    let mut v = v_init.clone();
    for layer in &net.layers {
        v = layer_forward(problem, layer, &v)?;
    }
    Ok(v)
}

/// Parameters for `layers` layers fitted greedily so the network mimics the
/// base algorithm on the given problems: layer `ℓ` is fitted on the states
/// produced by layers `< ℓ`, each approximator by least squares across all
/// problems (and classes, for the shared `Ψ`). With a single problem and at
/// most three classes every fit is exact, so the forward pass equals that
/// many base-algorithm iterations.
///
/// For the vanilla variant the V-step targets `(N + λ*I)⁻¹` with the exact
/// per-problem multipliers `λ*`, and the learned multiplier starts at their
/// mean.
pub fn anchored_net(
    variant: Variant,
    problems: &[PrecodingProblem],
    inits: &[PrecoderSet],
    layers: usize,
    mm_sublayers: usize,
) -> Result<UnfoldedNet> {
    let config = problems.first().ok_or_else(|| crate::Error::InvalidConfig("anchoring needs at least one channel".into()))?.config;
    let mut net = UnfoldedNet::blank(variant, config, layers, mm_sublayers)?;
    let mut states: Vec<PrecoderSet> = inits.to_vec();
    for l in 0..layers {
        let mut layer = net.layers[l].clone();

        let f_samples = problems
            .iter()
            .zip(&states)
            .map(|(p, v)| {
                let (f0, _) = p.compute_f(v);
                inverse_sample(&f0)
            })
            .collect::<Result<Vec<_>>>()?;
        layer.theta = fit_affine_inverse(&f_samples)?;

        let mut e_samples = Vec::new();
        let mut j_samples = Vec::new();
        for (p, v) in problems.iter().zip(&states) {
            let (f0, fj) = p.compute_f(v);
            let hv_s = effective_channel(v, p.ch) * p.sigma_sqrt();
            let u = (layer.theta.apply(&f0)? * hv_s).scale(p.alpha);
            e_samples.push(inverse_sample(&p.e0(&u, v))?);
            for f in &fj {
                j_samples.push(inverse_sample(f)?);
            }
        }
        layer.phi = fit_affine_inverse(&e_samples)?;
        layer.psi = fit_affine_inverse(&j_samples)?;

        if let VUpdateParams::Vanilla { omega, lambda } = &mut layer.v_update {
            fit_vanilla_v_step(problems, &states, &layer.theta, &layer.phi, &layer.psi, omega, lambda)?;
        }

        states = problems.iter().zip(&states).map(|(p, v)| layer_forward(p, &layer, v)).collect::<Result<Vec<_>>>()?;
        net.layers[l] = layer;
    }
    Ok(net)
}

fn inverse_sample(a: &CMatrix) -> Result<(CMatrix, CMatrix, CMatrix)> {
    let inv = Cholesky::new(&hermitian_part(a))?.inverse();
    Ok((diag_reciprocal(a)?, a.clone(), inv))
}

fn fit_vanilla_v_step(
    problems: &[PrecodingProblem],
    states: &[PrecoderSet],
    theta: &InverseApproxParams,
    phi: &InverseApproxParams,
    psi: &InverseApproxParams,
    omega: &mut [InverseApproxParams],
    lambda: &mut CMatrix,
) -> Result<()> {
    let k_count = omega.len();
    // Sequential devices: device k's QCQP depends on devices < k already
    // updated, so walk the problems once per device using exact steps.
    let probe = LayerParams { theta: theta.clone(), phi: phi.clone(), psi: psi.clone(), v_update: VUpdateParams::Mm { upsilon: vec![] } };
    let mut per_device: Vec<Vec<(CMatrix, f64)>> = vec![Vec::new(); k_count];
    for (p, v) in problems.iter().zip(states) {
        let (u, w) = learned_blocks(p, &probe, v)?;
        let mut next = v.clone();
        for k in 0..k_count {
            let qp = p.assemble_qcqp(&u, &w, &next, k);
            let step = v_step_bisection(&qp.b, &qp.n, qp.power)?;
            per_device[k].push((qp.n.clone(), step.lambda));
            next.blocks[k] = p.from_whitened(k, &step.v)?;
        }
    }
    for k in 0..k_count {
        let mean_lambda = per_device[k].iter().map(|(_, l)| l).sum::<f64>() / per_device[k].len() as f64;
        lambda[(k, 0)] = C64::new(mean_lambda, 0.0);
        if let [(n, l)] = per_device[k].as_slice() {
            let a0_inv = pseudo_inverse_psd(&(n + identity(n.nrows()).scale(*l)));
            omega[k] = shifted_taylor_anchor(&a0_inv, *l);
            continue;
        }
        let samples = per_device[k]
            .iter()
            .map(|(n, l)| {
                let shifted = n + identity(n.nrows()).scale(mean_lambda);
                Ok((diag_reciprocal(&shifted)?, n.clone(), pseudo_inverse_psd(&(n + identity(n.nrows()).scale(*l)))))
            })
            .collect::<Result<Vec<_>>>()?;
        omega[k] = fit_affine_inverse(&samples)?;
    }
    Ok(())
}

/// Inverse on the range of a PSD matrix, matching the bisection solver's
/// treatment of null directions.
fn pseudo_inverse_psd(a: &CMatrix) -> CMatrix {
    let top = crate::numerics::lambda_max(a).max(f64::MIN_POSITIVE);
    psd_function(a, |x| if x > 1e-13 * top { 1.0 / x } else { 0.0 })
}
