//! Block coordinate ascent for rate-reduction precoding.
//!
//! The log-det objective is lifted to a weighted-MSE form with auxiliary
//! blocks `U` (receive combiner) and `W_0, W_1..W_J` (weights). Each block has a
//! closed-form maximizer given the others:
//!
//! * U-step: `U = α F_0⁻¹ H V Σ^{1/2}`
//! * W-step: `W_0 = E_0⁻¹`, `W_j = F_j⁻¹`
//! * V-step: per device, the convex QCQP
//!   `min −2 Re{b_kᴴ v} + vᴴ N_k v  s.t. ‖v‖² ≤ P_k` in the whitened variable
//!   `v = D_k vec(V_k)`, solved via a bisection on the power multiplier.
//!
//! Devices are updated in ascending order and each V-step sees the blocks
//! already refreshed earlier in the same sweep.

use crate::error::{Error, Result};
use crate::mm;
use crate::model::{effective_channel, received_cov, ChannelState, GmModel, PrecoderSet, SystemConfig};
use crate::numerics::{
    devec, hermitian_eigen, hermitian_part, hermitian_solve, identity, kron, logdet_hpd, matrix_sqrt_psd, psd_function, real_inner,
    trace_re, vec, zeros, CMatrix, Cholesky,
};

pub const DEFAULT_MAX_ITERS: usize = 50;
pub const DEFAULT_TOL: f64 = 1e-8;
const MAX_DOUBLINGS: usize = 200;
const MAX_BISECTIONS: usize = 300;

/// One precoding instance `(config, mixture statistics, channel state)` with
/// the quantities that do not change across iterations precomputed.
#[derive(Debug, Clone)]
pub struct PrecodingProblem<'a> {
    pub config: &'a SystemConfig,
    pub gm: &'a GmModel,
    pub ch: &'a ChannelState,
    pub alpha: f64,
    pub gamma: f64,
    sigma_sqrt: CMatrix,
    whiten: Vec<CMatrix>,
    unwhiten: Vec<CMatrix>,
}

impl<'a> PrecodingProblem<'a> {
    pub fn new(config: &'a SystemConfig, gm: &'a GmModel, ch: &'a ChannelState) -> Result<Self> {
        config.validate()?;
        ch.check(config)?;
        if gm.dim() != config.feature_dim() {
            return Err(Error::DimensionMismatch {
                op: "PrecodingProblem",
                expected: format!("feature dim {}", config.feature_dim()),
                found: format!("{}", gm.dim()),
            });
        }
        let alpha = config.rx_dim() as f64 / config.eps2_precoding;
        let gamma = 1.0 + alpha * ch.noise_var();
        let sigma_sqrt = matrix_sqrt_psd(gm.global_cov());
        let mut whiten = Vec::with_capacity(config.num_devices());
        let mut unwhiten = Vec::with_capacity(config.num_devices());
        for k in 0..config.num_devices() {
            let skk = regularized_block(gm, config, k)?;
            // D_k = ((Σ^(kk))^T ⊗ I)^{1/2} = ((Σ^(kk))^T)^{1/2} ⊗ I
            let t = skk.transpose();
            let eye = identity(config.tx_dim(k));
            whiten.push(kron(&psd_function(&t, f64::sqrt), &eye));
            unwhiten.push(kron(&psd_function(&t, |x| 1.0 / x.sqrt()), &eye));
        }
        Ok(Self { config, gm, ch, alpha, gamma, sigma_sqrt, whiten, unwhiten })
    }

    pub fn sigma_sqrt(&self) -> &CMatrix {
        &self.sigma_sqrt
    }

    /// `D_k`.
    pub fn whitening(&self, k: usize) -> &CMatrix {
        &self.whiten[k]
    }

    /// `D_k⁻¹`.
    pub fn unwhitening(&self, k: usize) -> &CMatrix {
        &self.unwhiten[k]
    }

    /// `v_k = D_k vec(V_k)`.
    pub fn to_whitened(&self, k: usize, vk: &CMatrix) -> CMatrix {
        &self.whiten[k] * vec(vk)
    }

    /// `V_k = vec⁻¹(D_k⁻¹ v_k)`.
    pub fn from_whitened(&self, k: usize, v: &CMatrix) -> Result<CMatrix> {
        devec(&(&self.unwhiten[k] * v), self.config.tx_dim(k), self.config.devices[k].feature_dim)
    }

    /// `F_0 = γI + α H V Σ Vᴴ Hᴴ` and the per-class `F_j`.
    pub fn compute_f(&self, v: &PrecoderSet) -> (CMatrix, Vec<CMatrix>) {
        let hv = effective_channel(v, self.ch);
        let base = identity(self.ch.rx_dim()).scale(self.gamma);
        let f0 = &base + received_cov(&hv, self.gm.global_cov()).scale(self.alpha);
        let fj = self.gm.class_covs().iter().map(|s| &base + received_cov(&hv, s).scale(self.alpha)).collect();
        (f0, fj)
    }

    /// Rate-reduction objective `log det F_0 − Σ_j p_j log det F_j`.
    pub fn objective(&self, v: &PrecoderSet) -> Result<f64> {
        let (f0, fj) = self.compute_f(v);
        let mut value = logdet_hpd(&f0)?;
        for (p, f) in self.gm.priors().iter().zip(&fj) {
            value -= p * logdet_hpd(f)?;
        }
        Ok(value)
    }

    /// `U = α F_0⁻¹ H V Σ^{1/2}`.
    pub fn u_step(&self, v: &PrecoderSet) -> Result<CMatrix> {
        let (f0, _) = self.compute_f(v);
        let rhs = effective_channel(v, self.ch) * &self.sigma_sqrt;
        Ok(hermitian_solve(&f0, &rhs)?.scale(self.alpha))
    }

    /// `E_0 = (I − Uᴴ H V Σ^{1/2})(·)ᴴ + (γ/α) Uᴴ U`.
    pub fn e0(&self, u: &CMatrix, v: &PrecoderSet) -> CMatrix {
        let d = self.config.feature_dim();
        let a = identity(d) - u.adjoint() * effective_channel(v, self.ch) * &self.sigma_sqrt;
        hermitian_part(&(&a * a.adjoint() + (u.adjoint() * u).scale(self.gamma / self.alpha)))
    }

    /// `W_0 = E_0⁻¹`, `W_j = F_j⁻¹`.
    pub fn w_step(&self, u: &CMatrix, v: &PrecoderSet) -> Result<Weights> {
        let w0 = Cholesky::new(&self.e0(u, v))?.inverse();
        let (_, fj) = self.compute_f(v);
        let wj = fj.iter().map(|f| Ok(Cholesky::new(f)?.inverse())).collect::<Result<Vec<_>>>()?;
        Ok(Weights { w0, wj })
    }

    /// Lifted objective
    /// `log det W_0 − tr(W_0 E_0) + Σ_j p_j (log det W_j − tr(W_j F_j))`.
    pub fn lifted_objective(&self, u: &CMatrix, w: &Weights, v: &PrecoderSet) -> Result<f64> {
        let e0 = self.e0(u, v);
        let (_, fj) = self.compute_f(v);
        let mut value = logdet_hpd(&w.w0)? - trace_re(&(&w.w0 * e0));
        for ((p, wj), f) in self.gm.priors().iter().zip(&w.wj).zip(&fj) {
            value += p * (logdet_hpd(wj)? - trace_re(&(wj * f)));
        }
        Ok(value)
    }

    /// Whitened QCQP data `(b_k, N_k)` for device `k` given the current blocks.
    pub fn assemble_qcqp(&self, u: &CMatrix, w: &Weights, v: &PrecoderSet, k: usize) -> Qcqp {
        let cfg = self.config;
        let hk = &self.ch.blocks[k];
        let hk_h = hk.adjoint();
        let dk = cfg.devices[k].feature_dim;
        let rows_k = self.sigma_sqrt.rows(cfg.feature_offset(k), dk).into_owned();

        let uw0 = u * &w.w0;
        let uwu = &uw0 * u.adjoint();
        // Σ_{q≠k} H_q V_q Σ^(qk) for the global and each class covariance
        let cross = |cov: &CMatrix| -> CMatrix {
            let mut acc = zeros(self.ch.rx_dim(), dk);
            for q in (0..cfg.num_devices()).filter(|&q| q != k) {
                let sqk = GmModel::block(cov, cfg, q, k);
                acc += &self.ch.blocks[q] * &v.blocks[q] * sqk;
            }
            acc
        };

        let mut g = &hk_h * &uw0 * rows_k.adjoint() - &hk_h * &uwu * cross(self.gm.global_cov());
        for ((p, wj), cov) in self.gm.priors().iter().zip(&w.wj).zip(self.gm.class_covs()) {
            g -= (&hk_h * wj * cross(cov)).scale(self.alpha * p);
        }
        let b = &self.unwhiten[k] * vec(&g);

        let skk = GmModel::block(self.gm.global_cov(), cfg, k, k);
        let mut inner = kron(&skk.transpose(), &hermitian_part(&(&hk_h * &uwu * hk)));
        for ((p, wj), cov) in self.gm.priors().iter().zip(&w.wj).zip(self.gm.class_covs()) {
            let sjkk = GmModel::block(cov, cfg, k, k);
            inner += kron(&sjkk.transpose(), &hermitian_part(&(&hk_h * wj * hk))).scale(self.alpha * p);
        }
        let n = hermitian_part(&(&self.unwhiten[k] * inner * &self.unwhiten[k]));
        Qcqp { b, n, power: cfg.devices[k].power }
    }
}

fn regularized_block(gm: &GmModel, config: &SystemConfig, k: usize) -> Result<CMatrix> {
    let skk = hermitian_part(&GmModel::block(gm.global_cov(), config, k, k));
    let dk = skk.nrows() as f64;
    let tr = trace_re(&skk);
    if !(tr > 0.0) {
        return Err(Error::SingularFeatureBlock(k));
    }
    let floor = 1e-10 * tr / dk;
    let min_eig = hermitian_eigen(&skk).0[0];
    if min_eig < floor {
        let n = skk.nrows();
        Ok(skk + identity(n).scale(floor))
    } else {
        Ok(skk)
    }
}

/// Weight blocks of the lifted objective.
#[derive(Debug, Clone)]
pub struct Weights {
    pub w0: CMatrix,
    pub wj: Vec<CMatrix>,
}

/// `min −2 Re{bᴴ v} + vᴴ N v  s.t. ‖v‖² ≤ power`.
#[derive(Debug, Clone)]
pub struct Qcqp {
    pub b: CMatrix,
    pub n: CMatrix,
    pub power: f64,
}

impl Qcqp {
    pub fn objective(&self, v: &CMatrix) -> f64 {
        -2.0 * real_inner(&self.b, v) + real_inner(v, &(&self.n * v))
    }
}

/// Output of the bisection V-step.
#[derive(Debug, Clone)]
pub struct VStep {
    pub v: CMatrix,
    pub lambda: f64,
}

/// Solves the QCQP through `v = (N + λI)⁻¹ b`, bisecting on `λ ≥ 0` using an
/// eigen-decomposition of `N` so that every trial is a diagonal solve.
///
/// The bracket is halved until it no longer splits in floating point, and the
/// upper end is returned so the result is always feasible.
pub fn v_step_bisection(b: &CMatrix, n: &CMatrix, power: f64) -> Result<VStep> {
    let dim = b.len();
    if b.iter().all(|z| z.norm() == 0.0) {
        return Ok(VStep { v: zeros(dim, 1), lambda: 0.0 });
    }
    let (values, q) = hermitian_eigen(n);
    let values: Vec<f64> = values.iter().map(|&x| x.max(0.0)).collect();
    let proj = q.adjoint() * b;
    let weights: Vec<f64> = proj.iter().map(|z| z.norm_sqr()).collect();
    let top = values.iter().copied().fold(0.0, f64::max);
    let null_tol = 1e-13 * top.max(f64::MIN_POSITIVE);
    let b_sqr: f64 = weights.iter().sum();

    let norm_sqr = |lambda: f64| -> f64 {
        values
            .iter()
            .zip(&weights)
            .map(|(&e, &w)| {
                let d = e + lambda;
                if d <= null_tol {
                    if w > 1e-24 * b_sqr {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                } else {
                    w / (d * d)
                }
            })
            .sum()
    };
    let solve = |lambda: f64| -> CMatrix {
        let mut scaled = proj.clone();
        for (i, z) in scaled.iter_mut().enumerate() {
            let d = values[i] + lambda;
            *z = if d <= null_tol { num_complex::Complex64::new(0.0, 0.0) } else { *z / d };
        }
        &q * scaled
    };

    if norm_sqr(0.0) <= power {
        return Ok(VStep { v: solve(0.0), lambda: 0.0 });
    }
    let mut hi = 1.0;
    let mut doublings = 0;
    while norm_sqr(hi) >= power {
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::BisectionFailed(MAX_DOUBLINGS));
        }
    }
    let mut lo = 0.0;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm_sqr(mid) > power {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(VStep { v: solve(hi), lambda: hi })
}

/// How the per-device QCQP is solved inside one sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VStepRule {
    Bisection,
    /// Majorization-minimization with a fixed number of inner iterations,
    /// warm-started at the current precoder.
    Mm {
        inner_iters: usize,
    },
}

/// Auxiliary blocks and precoders of one solve.
#[derive(Debug, Clone)]
pub struct BcaState {
    pub u: CMatrix,
    pub weights: Weights,
    pub precoders: PrecoderSet,
    /// Objective at the initial point followed by one entry per full sweep.
    pub objective_trace: Vec<f64>,
    /// Power multipliers from the last bisection V-step (empty for MM).
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

impl BcaState {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial value")
    }
}

/// One sweep: U-step, W-step, then V-steps for devices `0..K`.
pub fn bca_sweep(problem: &PrecodingProblem, v: &PrecoderSet, rule: VStepRule) -> Result<(CMatrix, Weights, PrecoderSet, Vec<f64>)> {
    let u = problem.u_step(v)?;
    let w = problem.w_step(&u, v)?;
    let mut next = v.clone();
    let mut multipliers = Vec::new();
    for k in 0..problem.config.num_devices() {
        let qp = problem.assemble_qcqp(&u, &w, &next, k);
        let vk = match rule {
            VStepRule::Bisection => {
                let step = v_step_bisection(&qp.b, &qp.n, qp.power)?;
                multipliers.push(step.lambda);
                step.v
            }
            VStepRule::Mm { inner_iters } => {
                let start = problem.to_whitened(k, &next.blocks[k]);
                mm::mm_v_step(&qp.b, &qp.n, qp.power, &start, inner_iters)
            }
        };
        next.blocks[k] = problem.from_whitened(k, &vk)?;
    }
    Ok((u, w, next, multipliers))
}

/// Runs sweeps until the relative objective change drops below `tol` or
/// `max_iters` sweeps have run.
pub fn solve_with_rule(problem: &PrecodingProblem, v_init: &PrecoderSet, rule: VStepRule, max_iters: usize, tol: f64) -> Result<BcaState> {
    v_init.check(problem.config)?;
    let mut v = v_init.clone();
    let mut trace = vec![problem.objective(&v)?];
    let mut u = zeros(problem.config.rx_dim(), problem.config.feature_dim());
    let mut weights =
        Weights { w0: identity(problem.config.feature_dim()), wj: vec![identity(problem.config.rx_dim()); problem.gm.num_classes()] };
    let mut multipliers = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters {
        let (nu, nw, nv, mult) = bca_sweep(problem, &v, rule)?;
        u = nu;
        weights = nw;
        v = nv;
        multipliers = mult;
        iterations += 1;
        let prev = *trace.last().unwrap();
        let value = problem.objective(&v)?;
        trace.push(value);
        if (value - prev).abs() <= tol * prev.abs().max(value.abs()) {
            break;
        }
    }
    Ok(BcaState { u, weights, precoders: v, objective_trace: trace, multipliers, iterations })
}

/// Block coordinate ascent with the exact bisection V-step.
pub fn bca_solve(problem: &PrecodingProblem, v_init: &PrecoderSet, max_iters: usize, tol: f64) -> Result<BcaState> {
    solve_with_rule(problem, v_init, VStepRule::Bisection, max_iters, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_gm_model, sample_channel, HermitianPsd, RicianParams};
    use crate::numerics::{frobenius, real, CMatrix};
    use crate::seed::{complex_gaussian, rng};
    use rand::Rng;

    pub(crate) fn instance(seed: u64, k: usize, dk: usize, nt: usize, nr: usize, j: usize) -> (SystemConfig, GmModel, ChannelState) {
        let cfg = SystemConfig::uniform(k, j, dk, nt, nr, 1, 1.0).with_eps2_precoding(0.05);
        let gm = make_gm_model(&cfg, (k * dk / 2).max(1), seed).unwrap();
        let ch = sample_channel(&RicianParams::default().with_pathloss_db(0.0), &cfg, 0.5, seed + 1000).unwrap();
        (cfg, gm, ch)
    }

    fn scalar_problem(gamma: f64) -> (SystemConfig, GmModel, ChannelState) {
        // N_r = D = K = 1, H = Σ = 1, α = 1, γ set through σ
        let cfg = SystemConfig::uniform(1, 1, 1, 1, 1, 1, 1.0).with_eps2_precoding(1.0);
        let gm = GmModel::new(vec![1.0], vec![HermitianPsd::new(CMatrix::from_element(1, 1, real(1.0))).unwrap()]).unwrap();
        let sigma = (gamma - 1.0).max(0.0).sqrt().max(1e-300);
        let ch = ChannelState::new(vec![CMatrix::from_element(1, 1, real(1.0))], sigma).unwrap();
        (cfg, gm, ch)
    }

    fn scalar_v(x: f64) -> PrecoderSet {
        PrecoderSet { blocks: vec![CMatrix::from_element(1, 1, real(x))] }
    }

    #[test]
    fn compute_f_examples() {
        let (cfg, gm, ch) = scalar_problem(2.0);
        let p = PrecodingProblem::new(&cfg, &gm, &ch).unwrap();
        let (f0, _) = p.compute_f(&scalar_v(1.0));
        assert!((f0[(0, 0)].re - 3.0).abs() < 1e-12);

        let (cfg, gm, ch) = instance(1, 2, 2, 3, 3, 2);
        let p = PrecodingProblem::new(&cfg, &gm, &ch).unwrap();
        let (f0, fj) = p.compute_f(&PrecoderSet::zeros(&cfg));
        assert!(frobenius(&(f0 - identity(3).scale(p.gamma))) < 1e-12);
        let v = PrecoderSet::random_feasible(&cfg, &gm, 3);
        let (f0, fj2) = p.compute_f(&v);
        assert!(frobenius(&(&f0 - f0.adjoint())) < 1e-12);
        assert_eq!(fj.len(), fj2.len());
    }

    #[test]
    fn u_step_scalar_and_zero() {
        let (cfg, gm, ch) = scalar_problem(1.0);
        let p = PrecodingProblem::new(&cfg, &gm, &ch).unwrap();
        let u = p.u_step(&scalar_v(1.0)).unwrap();
        assert!((u[(0, 0)] - real(0.5)).norm() < 1e-12);

        let (cfg, gm, ch) = instance(2, 2, 2, 3, 3, 2);
        let p = PrecodingProblem::new(&cfg, &gm, &ch).unwrap();
        let u = p.u_step(&PrecoderSet::zeros(&cfg)).unwrap();
        assert!(u.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn u_and_w_steps_ascend_lifted_objective() {
        for seed in 0..10 {
            let (cfg, gm, ch) = instance(seed, 2, 2, 2, 3, 3);
            let p = PrecodingProblem::new(&cfg, &gm, &ch).unwrap();
            let v = PrecoderSet::random_feasible(&cfg, &gm, seed + 5);
            let u0 = complex_gaussian(&mut rng(seed), 3, 4).scale(0.1);
            let w0 = p.w_step(&u0, &v).unwrap();
            let before = p.lifted_objective(&u0, &w0, &v).unwrap();
            let u = p.u_step(&v).unwrap();
            let after_u = p.lifted_objective(&u, &w0, &v).unwrap();
            assert!(after_u >= before - 1e-10, "{after_u} < {before}");
            let w = p.w_step(&u, &v).unwrap();
            let after_w = p.lifted_objective(&u, &w, &v).unwrap();
            assert!(after_w >= after_u - 1e-10);
        }
    }

    #[test]
    fn w_step_examples() {
        let (cfg, gm, ch) = instance(3, 2, 2, 3, 3, 2);
        let p = PrecodingProblem::new(&cfg, &gm, &ch).unwrap();
        let zero_u = zeros(3, 4);
        let w = p.w_step(&zero_u, &PrecoderSet::zeros(&cfg)).unwrap();
        assert!(frobenius(&(&w.w0 - identity(4))) < 1e-12);

        let v = PrecoderSet::random_feasible(&cfg, &gm, 4);
        let u = p.u_step(&v).unwrap();
        let w = p.w_step(&u, &v).unwrap();
        let e0 = p.e0(&u, &v);
        assert!(frobenius(&(&e0 * &w.w0 - identity(4))) < 1e-9);
        let (_, fj) = p.compute_f(&v);
        for (f, wj) in fj.iter().zip(&w.wj) {
            assert!(frobenius(&(f * wj - identity(3))) < 1e-9);
        }

        let (cfg, gm, ch) = scalar_problem(3.0);
        let p = PrecodingProblem::new(&cfg, &gm, &ch).unwrap();
        let w = p.w_step(&zeros(1, 1), &scalar_v(0.0)).unwrap();
        assert!((w.wj[0][(0, 0)].re - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn lifted_objective_is_shifted_objective_at_optimal_blocks() {
        let (cfg, gm, ch) = instance(4, 2, 2, 3, 3, 3);
        let p = PrecodingProblem::new(&cfg, &gm, &ch).unwrap();
        let v = PrecoderSet::random_feasible(&cfg, &gm, 8);
        let u = p.u_step(&v).unwrap();
        let w = p.w_step(&u, &v).unwrap();
        let lifted = p.lifted_objective(&u, &w, &v).unwrap();
        let n = cfg.rx_dim() as f64;
        let d = cfg.feature_dim() as f64;
        let shift = -n * p.gamma.ln() - d - n;
        assert!((lifted - (p.objective(&v).unwrap() + shift)).abs() < 1e-8);
    }

    fn perturbed(p: &PrecodingProblem, v: &PrecoderSet, k: usize, vk: &CMatrix) -> PrecoderSet {
        let mut out = v.clone();
        out.blocks[k] = p.from_whitened(k, vk).unwrap();
        out
    }

    /// The QCQP must reproduce the lifted objective as a function of `v_k`:
    /// `L(v) − L(v') = −(f(v) − f(v'))` for all pairs.
    #[test]
    fn qcqp_matches_lifted_objective_differences() {
        for seed in 0..12 {
            let (cfg, gm, ch) = instance(seed, 1 + (seed as usize % 3), 2, 2, 3, 2);
            let p = PrecodingProblem::new(&cfg, &gm, &ch).unwrap();
            let v = PrecoderSet::random_feasible(&cfg, &gm, seed + 11);
            let u = p.u_step(&v).unwrap();
            let w = p.w_step(&u, &v).unwrap();
            for k in 0..cfg.num_devices() {
                let qp = p.assemble_qcqp(&u, &w, &v, k);
                let mut r = rng(seed * 7 + k as u64);
                let dim = qp.b.len();
                let a = complex_gaussian(&mut r, dim, 1);
                let b = complex_gaussian(&mut r, dim, 1);
                let la = p.lifted_objective(&u, &w, &perturbed(&p, &v, k, &a)).unwrap();
                let lb = p.lifted_objective(&u, &w, &perturbed(&p, &v, k, &b)).unwrap();
                let lhs = la - lb;
                let rhs = -(qp.objective(&a) - qp.objective(&b));
                assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0), "seed {seed} k {k}: {lhs} vs {rhs}");
                assert!(frobenius(&(&qp.n - qp.n.adjoint())) < 1e-12);
            }
        }
    }

    #[test]
    fn qcqp_single_device_has_no_cross_terms() {
        let (cfg, _, ch) = instance(5, 1, 3, 2, 3, 2);
        // full-rank statistics keep D_k well conditioned
        let gm = make_gm_model(&cfg, 3, 5).unwrap();
        let p = PrecodingProblem::new(&cfg, &gm, &ch).unwrap();
        let v = PrecoderSet::random_feasible(&cfg, &gm, 1);
        let u = p.u_step(&v).unwrap();
        let w = p.w_step(&u, &v).unwrap();
        let qp = p.assemble_qcqp(&u, &w, &v, 0);
        let g = ch.blocks[0].adjoint() * &u * &w.w0 * p.sigma_sqrt().adjoint();
        let expect = p.unwhitening(0) * vec(&g);
        assert!(frobenius(&(&qp.b - &expect)) < 1e-12 * frobenius(&expect), "{} vs {}", frobenius(&(&qp.b - &expect)), frobenius(&expect));
    }

    #[test]
    fn whitening_matches_definition() {
        let (cfg, gm, ch) = instance(6, 2, 2, 3, 3, 2);
        let p = PrecodingProblem::new(&cfg, &gm, &ch).unwrap();
        for k in 0..2 {
            let skk = GmModel::block(gm.global_cov(), &cfg, k, k);
            let direct = matrix_sqrt_psd(&kron(&skk.transpose(), &identity(cfg.tx_dim(k))));
            assert!(frobenius(&(direct - p.whitening(k))) < 1e-10);
            let prod = p.whitening(k) * p.unwhitening(k);
            assert!(frobenius(&(&prod - identity(prod.nrows()))) < 1e-9);
        }
        // ‖v‖² equals the power expression
        let v = PrecoderSet::random_feasible(&cfg, &gm, 2);
        for k in 0..2 {
            let w = p.to_whitened(k, &v.blocks[k]);
            assert!((crate::numerics::norm_sqr(&w) - v.power(k, &cfg, &gm)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_feature_block_is_singular() {
        let cfg = SystemConfig::uniform(2, 1, 1, 1, 1, 1, 1.0);
        let gm = GmModel::new(vec![1.0], vec![HermitianPsd::new(crate::numerics::diag_real(&[1.0, 0.0])).unwrap()]).unwrap();
        let ch = ChannelState::new(vec![identity(1), identity(1)], 1.0).unwrap();
        assert!(matches!(PrecodingProblem::new(&cfg, &gm, &ch), Err(Error::SingularFeatureBlock(1))));
    }

    fn scalar_qcqp(b: f64, n: f64) -> (CMatrix, CMatrix) {
        (CMatrix::from_element(1, 1, real(b)), CMatrix::from_element(1, 1, real(n)))
    }

    #[test]
    fn bisection_scalar_cases() {
        let (b, n) = scalar_qcqp(2.0, 1.0);
        let s = v_step_bisection(&b, &n, 1.0).unwrap();
        assert!((s.v[(0, 0)].re - 1.0).abs() < 1e-12);
        assert!((s.lambda - 1.0).abs() < 1e-9);

        let (b, n) = scalar_qcqp(0.5, 1.0);
        let s = v_step_bisection(&b, &n, 1.0).unwrap();
        assert_eq!(s.lambda, 0.0);
        assert!((s.v[(0, 0)].re - 0.5).abs() < 1e-15);

        let (b, n) = scalar_qcqp(0.0, 1.0);
        let s = v_step_bisection(&b, &n, 1.0).unwrap();
        assert_eq!(s.lambda, 0.0);
        assert_eq!(s.v[(0, 0)].norm(), 0.0);
    }

    #[test]
    fn bisection_handles_singular_n() {
        // N = 0: linear objective, optimum on the boundary along b
        let b = complex_gaussian(&mut rng(1), 4, 1);
        let s = v_step_bisection(&b, &zeros(4, 4), 2.0).unwrap();
        assert!((crate::numerics::norm_sqr(&s.v) - 2.0).abs() < 1e-8 * 2.0);
        assert!(s.lambda > 0.0);
    }

    pub(crate) fn random_ball_point<R: Rng>(r: &mut R, dim: usize, power: f64) -> CMatrix {
        let g = complex_gaussian(r, dim, 1);
        let radius = power.sqrt() * r.random::<f64>().powf(1.0 / (2 * dim) as f64);
        g.scale(radius / g.norm())
    }

    #[test]
    fn bisection_kkt_and_random_oracle() {
        for seed in 0..20 {
            let mut r = rng(seed);
            let dim = 1 + seed as usize % 6;
            let g = complex_gaussian(&mut r, dim, dim + 1);
            let n = hermitian_part(&(&g * g.adjoint()).unscale(dim as f64));
            let b = complex_gaussian(&mut r, dim, 1).scale(1.0 + seed as f64);
            let power = 0.5 + r.random::<f64>();
            let qp = Qcqp { b: b.clone(), n: n.clone(), power };
            let s = v_step_bisection(&b, &n, power).unwrap();
            let used = crate::numerics::norm_sqr(&s.v);
            if s.lambda == 0.0 {
                assert!(used <= power * (1.0 + 1e-12));
            } else {
                assert!((used - power).abs() <= 1e-8 * power);
            }
            let best = qp.objective(&s.v);
            for _ in 0..2000 {
                let x = random_ball_point(&mut r, dim, power);
                assert!(best <= qp.objective(&x) + 1e-12 * best.abs());
            }
        }
    }

    #[test]
    fn bca_trace_is_monotone_and_feasible() {
        for seed in 0..8 {
            let (cfg, gm, ch) = instance(seed, 1 + seed as usize % 3, 2, 2, 4, 3);
            let p = PrecodingProblem::new(&cfg, &gm, &ch).unwrap();
            let v0 = PrecoderSet::random_feasible(&cfg, &gm, seed);
            let st = bca_solve(&p, &v0, 50, 0.0).unwrap();
            for w in st.objective_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{:?}", st.objective_trace);
            }
            assert!(st.precoders.is_feasible(&cfg, &gm, 1e-9));
        }
    }

    #[test]
    fn bca_rerun_from_fixed_point_stops_immediately() {
        let (cfg, gm, ch) = instance(9, 2, 2, 2, 4, 2);
        let p = PrecodingProblem::new(&cfg, &gm, &ch).unwrap();
        let v0 = PrecoderSet::random_feasible(&cfg, &gm, 1);
        let st = bca_solve(&p, &v0, 2000, 1e-13).unwrap();
        let again = bca_solve(&p, &st.precoders, 50, 1e-8).unwrap();
        assert_eq!(again.iterations, 1);
    }

    #[test]
    fn lifted_objective_stable_at_fixed_point() {
        let (cfg, gm, ch) = instance(10, 2, 1, 2, 2, 2);
        let p = PrecodingProblem::new(&cfg, &gm, &ch).unwrap();
        let v0 = PrecoderSet::random_feasible(&cfg, &gm, 2);
        let st = bca_solve(&p, &v0, 200_000, 1e-16).unwrap();
        eprintln!("fixed point after {} sweeps", st.iterations);
        let before = p.lifted_objective(&st.u, &st.weights, &st.precoders).unwrap();
        let u = p.u_step(&st.precoders).unwrap();
        let w = p.w_step(&u, &st.precoders).unwrap();
        let after = p.lifted_objective(&u, &w, &st.precoders).unwrap();
        assert!((after - before).abs() < 1e-8, "{before} {after}");
    }
}
