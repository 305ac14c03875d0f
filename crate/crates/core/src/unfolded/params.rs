use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemConfig;
use crate::numerics::{diag_reciprocal, frobenius, identity, zeros, CMatrix, C64};

/// Learnable inverse approximation `A⁻¹ ≈ A^‡ Ξ₁ + A Ξ₂ + Ξ₃`, where `A^‡`
/// keeps only the reciprocal diagonal of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseApproxParams {
    pub xi: [CMatrix; 3],
}

impl InverseApproxParams {
    pub fn zeros(n: usize) -> Self {
        Self { xi: [zeros(n, n), zeros(n, n), zeros(n, n)] }
    }

    pub fn dim(&self) -> usize {
        self.xi[0].nrows()
    }

    /// Parameters that reproduce `A₀⁻¹` exactly at `A = A₀`:
    /// `Ξ₁ = 0`, `Ξ₂ = −A₀⁻²`, `Ξ₃ = 2A₀⁻¹`.
    pub fn taylor_anchor(a0_inv: &CMatrix) -> Self {
        let n = a0_inv.nrows();
        Self { xi: [zeros(n, n), -(a0_inv * a0_inv), a0_inv.scale(2.0)] }
    }

    pub fn apply(&self, a: &CMatrix) -> Result<CMatrix> {
        inv_approx(a, self)
    }
}

/// `A^‡ Ξ₁ + A Ξ₂ + Ξ₃`.
pub fn inv_approx(a: &CMatrix, p: &InverseApproxParams) -> Result<CMatrix> {
    if a.nrows() != p.dim() || a.ncols() != p.dim() {
        return Err(Error::DimensionMismatch {
            op: "inv_approx",
            expected: format!("{0}x{0}", p.dim()),
            found: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    Ok(diag_reciprocal(a)? * &p.xi[0] + a * &p.xi[1] + &p.xi[2])
}

/// Least-squares fit of `(X₁, X₂, X₃)` so that `P_c X₁ + Q_c X₂ + X₃ ≈ T_c`
/// for every sample `c`. Exact whenever the stacked system is consistent,
/// e.g. for up to three generic samples.
pub fn fit_affine_inverse(samples: &[(CMatrix, CMatrix, CMatrix)]) -> Result<InverseApproxParams> {
    let Some((p0, _, _)) = samples.first() else {
        return Err(Error::InvalidConfig("inverse fit needs at least one sample".into()));
    };
    let n = p0.nrows();
    if let [(_, q, t)] = samples {
        // One sample: the Taylor anchor is exact, as long as Q is the target's inverse.
        let residual = frobenius(&(q * t - identity(n)));
        if residual <= 1e-12 * frobenius(q) * frobenius(t) {
            return Ok(InverseApproxParams::taylor_anchor(t));
        }
    }
    let rows = samples.len() * n;
    let mut a = zeros(rows, 3 * n);
    let mut b = zeros(rows, n);
    // Column-block scaling keeps the three regressors comparable.
    let mut scale = [0.0f64; 3];
    for (p, q, _) in samples {
        scale[0] = scale[0].max(frobenius(p));
        scale[1] = scale[1].max(frobenius(q));
    }
    scale[2] = (n as f64).sqrt();
    for s in &mut scale {
        if !(*s > 0.0) {
            *s = 1.0;
        }
    }
    for (c, (p, q, t)) in samples.iter().enumerate() {
        let r0 = c * n;
        a.view_mut((r0, 0), (n, n)).copy_from(&p.unscale(scale[0]));
        a.view_mut((r0, n), (n, n)).copy_from(&q.unscale(scale[1]));
        a.view_mut((r0, 2 * n), (n, n)).copy_from(&identity(n).unscale(scale[2]));
        b.view_mut((r0, 0), (n, n)).copy_from(t);
    }
    let x = a.svd(true, true).solve(&b, 1e-13).map_err(|e| Error::InvalidConfig(format!("inverse fit failed: {e}")))?;
    let block = |i: usize| x.view((i * n, 0), (n, n)).unscale(scale[i]);
    Ok(InverseApproxParams { xi: [block(0), block(1), block(2)] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Learned inverse approximations and constant multipliers in the V-step.
    DuBca,
    /// Learned curvature matrices inside unrolled MM sub-layers.
    DuBcaMm,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::DuBca => "du-bca",
            Variant::DuBcaMm => "du-bca-mm",
        }
    }
}

/// V-step parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum VUpdateParams {
    /// Per device: `Ω_k` applied as `((N + λ_k I)^‡ Ω₁ + N Ω₂ + Ω₃) b`.
    /// `lambda` is a `K x 1` column.
    Vanilla { omega: Vec<InverseApproxParams>, lambda: CMatrix },
    /// `upsilon[k][i]` for device `k`, sub-layer `i`.
    Mm { upsilon: Vec<Vec<CMatrix>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Approximates `F_0⁻¹` in the U-update.
    pub theta: InverseApproxParams,
    /// Approximates `E_0⁻¹` for `W_0`.
    pub phi: InverseApproxParams,
    /// Approximates every `F_j⁻¹`; shared across classes.
    pub psi: InverseApproxParams,
    pub v_update: VUpdateParams,
}

impl LayerParams {
    /// All learnable matrices in a fixed order.
    pub fn blocks(&self) -> Vec<&CMatrix> {
        let mut out: Vec<&CMatrix> = Vec::new();
        for set in [&self.theta, &self.phi, &self.psi] {
            out.extend(set.xi.iter());
        }
        match &self.v_update {
            VUpdateParams::Vanilla { omega, lambda } => {
                for o in omega {
                    out.extend(o.xi.iter());
                }
                out.push(lambda);
            }
            VUpdateParams::Mm { upsilon } => {
                for per_device in upsilon {
                    out.extend(per_device.iter());
                }
            }
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut CMatrix> {
        let mut out: Vec<&mut CMatrix> = Vec::new();
        for set in [&mut self.theta, &mut self.phi, &mut self.psi] {
            out.extend(set.xi.iter_mut());
        }
        match &mut self.v_update {
            VUpdateParams::Vanilla { omega, lambda } => {
                for o in omega {
                    out.extend(o.xi.iter_mut());
                }
                out.push(lambda);
            }
            VUpdateParams::Mm { upsilon } => {
                for per_device in upsilon {
                    out.extend(per_device.iter_mut());
                }
            }
        }
        out
    }

    /// Natural magnitude of each block, aligned with [`Self::blocks`].
    ///
    /// Within an inverse approximator `Ξ₃ ~ A⁻¹`, `Ξ₂ ~ A⁻²` and `Ξ₁` is
    /// dimensionless, so `Ξ₁` borrows the scale `|Ξ₃|²/|Ξ₂|`.
    pub fn block_scales(&self) -> Vec<f64> {
        fn set_scales(p: &InverseApproxParams) -> [f64; 3] {
            let s2 = rms(&p.xi[1]);
            let s3 = rms(&p.xi[2]);
            let derived = if s2 > 0.0 { s3 * s3 / s2 } else { s3 };
            [rms(&p.xi[0]).max(derived), s2, s3].map(sanitize)
        }
        let mut out = Vec::new();
        for set in [&self.theta, &self.phi, &self.psi] {
            out.extend(set_scales(set));
        }
        match &self.v_update {
            VUpdateParams::Vanilla { omega, lambda } => {
                let mut lambda_scale: f64 = 0.0;
                for o in omega {
                    let s = set_scales(o);
                    lambda_scale = lambda_scale.max(s[2] / s[1]);
                    out.extend(s);
                }
                out.push(sanitize(rms(lambda).max(lambda_scale)));
            }
            VUpdateParams::Mm { upsilon } => {
                for per_device in upsilon {
                    for u in per_device {
                        out.push(sanitize(rms(u).max(1.0 / (u.nrows() as f64).sqrt())));
                    }
                }
            }
        }
        out
    }
}

fn rms(m: &CMatrix) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        frobenius(m) / (m.len() as f64).sqrt()
    }
}

fn sanitize(s: f64) -> f64 {
    if s.is_finite() && s > 0.0 {
        s
    } else {
        1.0
    }
}

/// An unfolded precoding network: `L` layers of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedNet {
    pub variant: Variant,
    pub config: SystemConfig,
    /// MM sub-layers per layer (DU-BCA-MM only; 0 otherwise).
    pub mm_sublayers: usize,
    pub layers: Vec<LayerParams>,
}

impl UnfoldedNet {
    /// A network whose parameters are all zero except `Υ = I`; callers
    /// normally start from [`crate::unfolded::anchored_net`] instead.
    pub fn blank(variant: Variant, config: &SystemConfig, layers: usize, mm_sublayers: usize) -> Result<Self> {
        config.validate()?;
        let nr = config.rx_dim();
        let d = config.feature_dim();
        let sub = if variant == Variant::DuBcaMm { mm_sublayers } else { 0 };
        if variant == Variant::DuBcaMm && sub == 0 {
            return Err(Error::InvalidConfig("DU-BCA-MM needs at least one MM sub-layer".into()));
        }
        let layer = || {
            let v_update = match variant {
                Variant::DuBca => VUpdateParams::Vanilla {
                    omega: (0..config.num_devices()).map(|k| InverseApproxParams::zeros(whitened_dim(config, k))).collect(),
                    lambda: zeros(config.num_devices(), 1),
                },
                Variant::DuBcaMm => {
                    VUpdateParams::Mm { upsilon: (0..config.num_devices()).map(|k| vec![identity(whitened_dim(config, k)); sub]).collect() }
                }
            };
            LayerParams {
                theta: InverseApproxParams::zeros(nr),
                phi: InverseApproxParams::zeros(d),
                psi: InverseApproxParams::zeros(nr),
                v_update,
            }
        };
        Ok(Self { variant, config: config.clone(), mm_sublayers: sub, layers: (0..layers).map(|_| layer()).collect() })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Number of complex scalars actually learned.
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.blocks()).map(|m| m.len()).sum()
    }

    /// Real coordinates, row-major within each block, `(re, im)` interleaved.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.parameter_count());
        for layer in &self.layers {
            for m in layer.blocks() {
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        out.push(m[(i, j)].re);
                        out.push(m[(i, j)].im);
                    }
                }
            }
        }
        out
    }

    pub fn set_vector(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != 2 * self.parameter_count() {
            return Err(Error::DimensionMismatch {
                op: "UnfoldedNet::set_vector",
                expected: format!("{}", 2 * self.parameter_count()),
                found: format!("{}", x.len()),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        let mut it = x.chunks_exact(2);
        for layer in &mut self.layers {
            for m in layer.blocks_mut() {
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        let pair = it.next().expect("length checked above");
                        m[(i, j)] = C64::new(pair[0], pair[1]);
                    }
                }
            }
        }
        Ok(())
    }

    /// Per-real-coordinate magnitude, aligned with [`Self::to_vector`].
    pub fn coordinate_scales(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.parameter_count());
        for layer in &self.layers {
            for (m, s) in layer.blocks().into_iter().zip(layer.block_scales()) {
                out.extend(std::iter::repeat_n(s, 2 * m.len()));
            }
        }
        out
    }
}

/// `D_k O N_t_k`, the length of the whitened precoder of device `k`.
pub fn whitened_dim(config: &SystemConfig, k: usize) -> usize {
    config.devices[k].feature_dim * config.tx_dim(k)
}

/// Per-layer count as tabulated for the architecture, which lists one
/// matrix per approximator (`Θ`, `Φ`, `Ψ`, `Ω_k`) rather than three:
/// vanilla `2N_r² + D² + Σ_k D_k² N_t,k² + K`, enhanced
/// `2N_r² + D² + Σ_k I D_k² N_t,k²`. Here `N_r` and `N_t,k` include slots.
pub fn tabulated_layer_count(variant: Variant, config: &SystemConfig, mm_sublayers: usize) -> usize {
    let nr = config.rx_dim();
    let d = config.feature_dim();
    let base = 2 * nr * nr + d * d;
    let per_device: usize = (0..config.num_devices()).map(|k| whitened_dim(config, k).pow(2)).sum();
    match variant {
        Variant::DuBca => base + per_device + config.num_devices(),
        Variant::DuBcaMm => base + mm_sublayers * per_device,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{diag_real, hermitian_inverse};
    use crate::testutil::{random_hpd, rng};

    #[test]
    fn inverse_approx_examples() {
        let a = diag_real(&[2.0, 4.0, 0.5]);
        let mut p = InverseApproxParams::zeros(3);
        p.xi[0] = identity(3);
        let inv = inv_approx(&a, &p).unwrap();
        assert!(frobenius(&(inv - diag_real(&[0.5, 0.25, 2.0]))) < 1e-15);

        let mut r = rng(3);
        let c = random_hpd(&mut r, 3, 0.1);
        let mut p = InverseApproxParams::zeros(3);
        p.xi[2] = c.clone();
        assert_eq!(inv_approx(&random_hpd(&mut r, 3, 0.5), &p).unwrap(), c);

        for seed in 0..20 {
            let mut r = rng(seed);
            let a0 = random_hpd(&mut r, 4, 0.2);
            let a0_inv = hermitian_inverse(&a0).unwrap();
            let p = InverseApproxParams::taylor_anchor(&a0_inv);
            let approx = inv_approx(&a0, &p).unwrap();
            assert!(frobenius(&(approx - &a0_inv)) < 1e-9 * frobenius(&a0_inv));
        }
    }

    #[test]
    fn zero_diagonal_is_rejected() {
        let a = diag_real(&[1.0, 0.0]);
        assert!(matches!(inv_approx(&a, &InverseApproxParams::zeros(2)), Err(Error::ZeroDiagonal { index: 1 })));
    }

    #[test]
    fn affine_fit_is_exact_for_up_to_three_matrices() {
        for count in 1..=3 {
            let mut r = rng(count as u64);
            let samples: Vec<_> = (0..count)
                .map(|_| {
                    let a = random_hpd(&mut r, 4, 0.3);
                    let inv = hermitian_inverse(&a).unwrap();
                    (diag_reciprocal(&a).unwrap(), a, inv)
                })
                .collect();
            let p = fit_affine_inverse(&samples).unwrap();
            for (_, a, inv) in &samples {
                let err = frobenius(&(inv_approx(a, &p).unwrap() - inv)) / frobenius(inv);
                assert!(err < 1e-8, "count {count}: {err}");
            }
        }
    }

    #[test]
    fn vector_roundtrip_and_counts() {
        let cfg = SystemConfig::uniform(2, 3, 2, 3, 4, 1, 1.0);
        for (variant, sub) in [(Variant::DuBca, 0), (Variant::DuBcaMm, 2)] {
            let mut net = UnfoldedNet::blank(variant, &cfg, 3, sub).unwrap();
            let x: Vec<f64> = (0..2 * net.parameter_count()).map(|i| i as f64 * 0.01).collect();
            net.set_vector(&x).unwrap();
            assert_eq!(net.to_vector(), x);
            assert_eq!(net.coordinate_scales().len(), x.len());

            let tab = tabulated_layer_count(variant, &cfg, sub);
            let (nr, d, wd) = (4, 4, 6);
            let expected = match variant {
                Variant::DuBca => 2 * nr * nr + d * d + 2 * wd * wd + 2,
                Variant::DuBcaMm => 2 * nr * nr + d * d + 2 * 2 * wd * wd,
            };
            assert_eq!(tab, expected);
            // Each approximator holds three matrices.
            let actual = match variant {
                Variant::DuBca => 3 * (2 * nr * nr + d * d + 2 * wd * wd) + 2,
                Variant::DuBcaMm => 3 * (2 * nr * nr + d * d) + 2 * 2 * wd * wd,
            };
            assert_eq!(net.parameter_count(), 3 * actual);
        }
    }
}
