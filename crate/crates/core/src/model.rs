//! System configuration, Gaussian-mixture feature source, Rician channel
//! sampler and the linear signal model `r = H V z + n`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{block_diag, c, frobenius, hermitian_part, identity, matrix_sqrt_psd, trace_re, zeros, CMatrix, C64, ZERO};
use crate::seed::{complex_gaussian, rng};

/// Per-device dimensions and power budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub feature_dim: usize,
    pub tx_antennas: usize,
    /// Linear power budget (mW).
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub devices: Vec<DeviceConfig>,
    pub classes: usize,
    pub rx_antennas: usize,
    pub slots: usize,
    pub eps2_feature: f64,
    pub eps2_precoding: f64,
}

pub const DEFAULT_EPS2_FEATURE: f64 = 0.5;
pub const DEFAULT_EPS2_PRECODING: f64 = 1e-6;

impl SystemConfig {
    /// `K` identical devices.
    pub fn uniform(
        devices: usize,
        classes: usize,
        feature_dim: usize,
        tx_antennas: usize,
        rx_antennas: usize,
        slots: usize,
        power: f64,
    ) -> Self {
        Self {
            devices: vec![DeviceConfig { feature_dim, tx_antennas, power }; devices],
            classes,
            rx_antennas,
            slots,
            eps2_feature: DEFAULT_EPS2_FEATURE,
            eps2_precoding: DEFAULT_EPS2_PRECODING,
        }
    }

    pub fn with_eps2_precoding(mut self, eps2: f64) -> Self {
        self.eps2_precoding = eps2;
        self
    }

    pub fn with_slots(mut self, slots: usize) -> Self {
        self.slots = slots;
        self
    }

    /// Same budget (mW) on every device.
    pub fn with_power(mut self, power: f64) -> Self {
        for d in &mut self.devices {
            d.power = power;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.devices.is_empty() {
            return bad("at least one device is required");
        }
        if self.classes == 0 || self.rx_antennas == 0 || self.slots == 0 {
            return bad("class, receive-antenna and slot counts must be >= 1");
        }
        for (k, d) in self.devices.iter().enumerate() {
            if d.feature_dim == 0 || d.tx_antennas == 0 {
                return Err(Error::InvalidConfig(format!("device {k}: dimensions must be >= 1")));
            }
            if !(d.power > 0.0) || !d.power.is_finite() {
                return Err(Error::InvalidConfig(format!("device {k}: power budget must be > 0")));
            }
        }
        if !(self.eps2_feature > 0.0) || !(self.eps2_precoding > 0.0) {
            return bad("eps2 values must be > 0");
        }
        Ok(())
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    /// Total feature dimension `D`.
    pub fn feature_dim(&self) -> usize {
        self.devices.iter().map(|d| d.feature_dim).sum()
    }

    /// Offset of device `k`'s sub-vector inside the concatenated feature.
    pub fn feature_offset(&self, k: usize) -> usize {
        self.devices[..k].iter().map(|d| d.feature_dim).sum()
    }

    /// Received-signal dimension `O * N_r`.
    pub fn rx_dim(&self) -> usize {
        self.slots * self.rx_antennas
    }

    /// Stacked transmit dimension `O * N_t_k` of device `k`.
    pub fn tx_dim(&self, k: usize) -> usize {
        self.slots * self.devices[k].tx_antennas
    }

    /// `alpha = O N_r / eps^2` for the precoding objective.
    pub fn alpha(&self) -> f64 {
        self.rx_dim() as f64 / self.eps2_precoding
    }

    /// `gamma = 1 + alpha sigma^2`.
    pub fn gamma(&self, sigma: f64) -> f64 {
        1.0 + self.alpha() * sigma * sigma
    }
}

/// Hermitian positive semidefinite matrix with the PSD invariant checked at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianPsd(CMatrix);

impl HermitianPsd {
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                op: "HermitianPsd",
                expected: "square".into(),
                found: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
        let scale = frobenius(&m).max(1e-300);
        if frobenius(&(&m - m.adjoint())) > 1e-9 * scale {
            return Err(Error::Artifact("matrix is not Hermitian".into()));
        }
        let h = hermitian_part(&m);
        let n = h.nrows().max(1);
        let tol = 1e-10 * trace_re(&h).abs() / n as f64 + 1e-14 * scale;
        let min_eig = crate::numerics::hermitian_eigen(&h).0.iter().copied().fold(f64::INFINITY, f64::min);
        if h.nrows() > 0 && min_eig < -tol {
            return Err(Error::NotPositiveDefinite { pivot: 0, value: min_eig });
        }
        Ok(Self(h))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }
}

/// Zero-mean Gaussian-mixture feature model: priors, class covariances and
/// their mixture.
#[derive(Debug, Clone)]
pub struct GmModel {
    priors: Vec<f64>,
    class_covs: Vec<CMatrix>,
    global_cov: CMatrix,
}

impl GmModel {
    pub fn new(priors: Vec<f64>, class_covs: Vec<HermitianPsd>) -> Result<Self> {
        if priors.is_empty() || priors.len() != class_covs.len() {
            return Err(Error::InvalidConfig("priors and class covariances must pair up".into()));
        }
        if priors.iter().any(|&p| !(p >= 0.0)) || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig("priors must be nonnegative and sum to 1".into()));
        }
        let dim = class_covs[0].matrix().nrows();
        if class_covs.iter().any(|s| s.matrix().nrows() != dim) {
            return Err(Error::InvalidConfig("class covariances differ in dimension".into()));
        }
        let class_covs: Vec<CMatrix> = class_covs.into_iter().map(HermitianPsd::into_inner).collect();
        let global_cov = mixture(&priors, &class_covs);
        Ok(Self { priors, class_covs, global_cov })
    }

    pub fn num_classes(&self) -> usize {
        self.priors.len()
    }

    pub fn dim(&self) -> usize {
        self.global_cov.nrows()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn class_covs(&self) -> &[CMatrix] {
        &self.class_covs
    }

    pub fn class_cov(&self, j: usize) -> &CMatrix {
        &self.class_covs[j]
    }

    pub fn global_cov(&self) -> &CMatrix {
        &self.global_cov
    }

    /// Rows `offset(q)..` and columns `offset(k)..` of `cov`.
    pub fn block(cov: &CMatrix, config: &SystemConfig, q: usize, k: usize) -> CMatrix {
        let (r0, c0) = (config.feature_offset(q), config.feature_offset(k));
        let (rn, cn) = (config.devices[q].feature_dim, config.devices[k].feature_dim);
        cov.view((r0, c0), (rn, cn)).into_owned()
    }
}

fn mixture(priors: &[f64], covs: &[CMatrix]) -> CMatrix {
    let dim = covs[0].nrows();
    let mut g = zeros(dim, dim);
    for (p, s) in priors.iter().zip(covs) {
        g += s.scale(*p);
    }
    hermitian_part(&g)
}

/// Synthetic mixture: class `j` covariance is `B_j B_j^H / rank` with `B_j`
/// orthonormal columns (QR of a complex Gaussian draw); priors uniform.
pub fn make_gm_model(config: &SystemConfig, subspace_rank: usize, seed: u64) -> Result<GmModel> {
    let dim = config.feature_dim();
    if subspace_rank > dim || subspace_rank == 0 {
        return Err(Error::RankTooLarge { rank: subspace_rank, dim });
    }
    let mut r = rng(seed);
    let mut covs = Vec::with_capacity(config.classes);
    for _ in 0..config.classes {
        let g = complex_gaussian(&mut r, dim, subspace_rank);
        let q = g.qr().q();
        let b = q.columns(0, subspace_rank).into_owned();
        let s = (&b * b.adjoint()).unscale(subspace_rank as f64);
        covs.push(HermitianPsd::new(hermitian_part(&s))?);
    }
    let priors = vec![1.0 / config.classes as f64; config.classes];
    GmModel::new(priors, covs)
}

/// Feature samples `Z` (D x M) with labels.
#[derive(Debug, Clone)]
pub struct FeatureBatch {
    pub samples: CMatrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl FeatureBatch {
    pub fn new(samples: CMatrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if samples.ncols() != labels.len() {
            return Err(Error::DimensionMismatch {
                op: "FeatureBatch",
                expected: format!("{} labels", samples.ncols()),
                found: format!("{}", labels.len()),
            });
        }
        if labels.iter().any(|&y| y >= classes) {
            return Err(Error::InvalidConfig("label out of range".into()));
        }
        Ok(Self { samples, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.nrows()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut n = vec![0; self.classes];
        for &y in &self.labels {
            n[y] += 1;
        }
        n
    }

    pub fn class_indices(&self, j: usize) -> Vec<usize> {
        (0..self.len()).filter(|&m| self.labels[m] == j).collect()
    }

    /// `Z_j`: the columns belonging to class `j`.
    pub fn class_samples(&self, j: usize) -> CMatrix {
        let idx = self.class_indices(j);
        CMatrix::from_fn(self.dim(), idx.len(), |i, col| self.samples[(i, idx[col])])
    }

    /// Scales every column to unit norm.
    pub fn normalize(&mut self) -> Result<()> {
        for m in 0..self.samples.ncols() {
            let n = self.samples.column(m).norm();
            if !(n > 0.0) {
                return Err(Error::ZeroFeatureColumn(m));
            }
            self.samples.column_mut(m).unscale_mut(n);
        }
        Ok(())
    }

    /// Empirical statistics `Σ = Z Z^H / M`, `Σ_j = Z_j Z_j^H / M_j`, priors `M_j / M`.
    pub fn statistics(&self) -> Result<GmModel> {
        let m = self.len();
        if m == 0 {
            return Err(Error::EmptyClass(0));
        }
        let counts = self.class_counts();
        let mut covs = Vec::with_capacity(self.classes);
        for (j, &mj) in counts.iter().enumerate() {
            if mj == 0 {
                return Err(Error::EmptyClass(j));
            }
            let zj = self.class_samples(j);
            covs.push(HermitianPsd::new(hermitian_part(&(&zj * zj.adjoint()).unscale(mj as f64)))?);
        }
        let priors: Vec<f64> = counts.iter().map(|&mj| mj as f64 / m as f64).collect();
        // priors from integer counts can miss 1 by an ulp or two
        let total: f64 = priors.iter().sum();
        let priors = priors.into_iter().map(|p| p / total).collect();
        GmModel::new(priors, covs)
    }
}

/// Draws `M` labelled samples; `z | y=j ~ CN(0, Σ_j)`. With `normalize`, every
/// column is scaled to unit norm (a zero column is an error).
pub fn sample_features(model: &GmModel, count: usize, normalize: bool, seed: u64) -> Result<FeatureBatch> {
    let mut r = rng(seed);
    let sqrt: Vec<CMatrix> = model.class_covs().iter().map(matrix_sqrt_psd).collect();
    let dim = model.dim();
    let mut samples = zeros(dim, count);
    let mut labels = Vec::with_capacity(count);
    for m in 0..count {
        let y = draw_class(&mut r, model.priors());
        let w = complex_gaussian(&mut r, dim, 1);
        samples.set_column(m, &(&sqrt[y] * w).column(0));
        labels.push(y);
    }
    let mut batch = FeatureBatch::new(samples, labels, model.num_classes())?;
    if normalize {
        batch.normalize()?;
    }
    Ok(batch)
}

fn draw_class<R: Rng + ?Sized>(r: &mut R, priors: &[f64]) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (j, p) in priors.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    priors.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Rician fading with log-distance path loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RicianParams {
    pub kappa: f64,
    pub distance_m: f64,
    pub pathloss_db: f64,
    /// Repeat the same realization over all slots.
    pub hold_channel: bool,
}

impl RicianParams {
    pub fn new(kappa: f64, distance_m: f64) -> Self {
        Self { kappa, distance_m, pathloss_db: pathloss_db(distance_m), hold_channel: true }
    }

    pub fn with_pathloss_db(mut self, db: f64) -> Self {
        self.pathloss_db = db;
        self
    }

    pub fn with_hold_channel(mut self, hold: bool) -> Self {
        self.hold_channel = hold;
        self
    }

    /// Linear amplitude gain `10^(-PL/20)`.
    pub fn amplitude(&self) -> f64 {
        10f64.powf(-self.pathloss_db / 20.0)
    }
}

impl Default for RicianParams {
    fn default() -> Self {
        Self::new(1.0, 80.0)
    }
}

/// Reference noise power, dBm.
pub const DEFAULT_NOISE_DBM: f64 = -80.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Power in mW, the internal linear unit.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_linear(dbm)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Transmit power (mW) that yields `snr_db = P_dBm − PL_dB − σ²_dBm` at the
/// receiver.
pub fn power_for_snr(snr_db: f64, noise_dbm: f64, pathloss_db: f64) -> f64 {
    dbm_to_mw(snr_db + pathloss_db + noise_dbm)
}

/// `32.6 + 36.7 lg d` dB.
pub fn pathloss_db(distance_m: f64) -> f64 {
    32.6 + 36.7 * distance_m.log10()
}

/// Deterministic line-of-sight component of device `k`: outer product of two
/// unit-modulus steering vectors with linearly spaced phases.
pub fn los_component(k: usize, rx: usize, tx: usize) -> CMatrix {
    let pi = std::f64::consts::PI;
    let arrival = (pi / 6.0 + 0.7 * k as f64).sin();
    let departure = (-pi / 5.0 + 0.45 * k as f64).sin();
    CMatrix::from_fn(rx, tx, |n, m| {
        let phase = pi * (n as f64 * arrival - m as f64 * departure);
        C64::from_polar(1.0, phase)
    })
}

/// Channel blocks `H_k` (each `O N_r x O N_t_k`, block-diagonal over slots)
/// and the noise standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub blocks: Vec<CMatrix>,
    pub sigma: f64,
}

impl ChannelState {
    pub fn new(blocks: Vec<CMatrix>, sigma: f64) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidConfig("channel needs at least one block".into()));
        }
        let rows = blocks[0].nrows();
        if blocks.iter().any(|b| b.nrows() != rows) {
            return Err(Error::DimensionMismatch {
                op: "ChannelState",
                expected: format!("{rows} rows per block"),
                found: "ragged blocks".into(),
            });
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidConfig("noise level must be > 0".into()));
        }
        Ok(Self { blocks, sigma })
    }

    pub fn rx_dim(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn noise_var(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn with_sigma(&self, sigma: f64) -> Self {
        Self { blocks: self.blocks.clone(), sigma }
    }

    /// `H = [H_1, ..., H_K]`.
    pub fn assembled(&self) -> CMatrix {
        let cols: usize = self.blocks.iter().map(|b| b.ncols()).sum();
        let mut h = zeros(self.rx_dim(), cols);
        let mut c0 = 0;
        for b in &self.blocks {
            h.view_mut((0, c0), b.shape()).copy_from(b);
            c0 += b.ncols();
        }
        h
    }

    pub fn check(&self, config: &SystemConfig) -> Result<()> {
        let ok = self.blocks.len() == config.num_devices()
            && self.rx_dim() == config.rx_dim()
            && self.blocks.iter().enumerate().all(|(k, b)| b.ncols() == config.tx_dim(k));
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                op: "channel",
                expected: format!("{} devices, {} receive rows", config.num_devices(), config.rx_dim()),
                found: format!("{} blocks, {} rows", self.blocks.len(), self.rx_dim()),
            })
        }
    }
}

/// A system configuration together with the propagation model and the
/// receiver noise level, i.e. everything needed to draw channel states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: SystemConfig,
    pub rician: RicianParams,
    /// Noise power per receive antenna, mW.
    pub noise_var: f64,
}

impl Scenario {
    /// Sets every device budget so the receive SNR equals `snr_db`.
    pub fn at_snr(config: SystemConfig, rician: RicianParams, noise_dbm: f64, snr_db: f64) -> Self {
        let power = power_for_snr(snr_db, noise_dbm, rician.pathloss_db);
        Self { config: config.with_power(power), rician, noise_var: dbm_to_mw(noise_dbm) }
    }

    pub fn sigma(&self) -> f64 {
        self.noise_var.sqrt()
    }

    /// Receive SNR of device 0 in dB.
    pub fn snr_db(&self) -> f64 {
        mw_to_dbm(self.config.devices[0].power) - self.rician.pathloss_db - mw_to_dbm(self.noise_var)
    }

    pub fn channel(&self, seed: u64) -> Result<ChannelState> {
        sample_channel(&self.rician, &self.config, self.sigma(), seed)
    }
}

/// One channel realization for every device and slot.
pub fn sample_channel(params: &RicianParams, config: &SystemConfig, sigma: f64, seed: u64) -> Result<ChannelState> {
    let mut r = rng(seed);
    let amp = params.amplitude();
    let los_w = (params.kappa / (params.kappa + 1.0)).sqrt();
    let nlos_w = (1.0 / (params.kappa + 1.0)).sqrt();
    let (nr, o) = (config.rx_antennas, config.slots);
    let mut blocks = Vec::with_capacity(config.num_devices());
    for (k, dev) in config.devices.iter().enumerate() {
        let los = los_component(k, nr, dev.tx_antennas);
        let mut slots: Vec<CMatrix> = Vec::with_capacity(o);
        for s in 0..o {
            if s > 0 && params.hold_channel {
                slots.push(slots[0].clone());
                continue;
            }
            let nlos = complex_gaussian(&mut r, nr, dev.tx_antennas);
            slots.push((los.scale(los_w) + nlos.scale(nlos_w)).scale(amp));
        }
        blocks.push(block_diag(&slots));
    }
    ChannelState::new(blocks, sigma)
}

/// Per-device precoders `V_k` (`O N_t_k x D_k`).
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    pub blocks: Vec<CMatrix>,
}

impl PrecoderSet {
    pub fn zeros(config: &SystemConfig) -> Self {
        Self { blocks: (0..config.num_devices()).map(|k| zeros(config.tx_dim(k), config.devices[k].feature_dim)).collect() }
    }

    /// `V = blockdiag(V_1, ..., V_K)`.
    pub fn block_diag(&self) -> CMatrix {
        block_diag(&self.blocks)
    }

    /// `tr(V_k Σ^(kk) V_k^H)`.
    pub fn power(&self, k: usize, config: &SystemConfig, gm: &GmModel) -> f64 {
        let skk = GmModel::block(gm.global_cov(), config, k, k);
        let v = &self.blocks[k];
        trace_re(&(v * skk * v.adjoint()))
    }

    pub fn is_feasible(&self, config: &SystemConfig, gm: &GmModel, slack: f64) -> bool {
        (0..self.blocks.len()).all(|k| self.power(k, config, gm) <= config.devices[k].power + slack)
    }

    /// Rescales each infeasible block onto its power boundary.
    pub fn project(&mut self, config: &SystemConfig, gm: &GmModel) {
        for k in 0..self.blocks.len() {
            let p = self.power(k, config, gm);
            let budget = config.devices[k].power;
            if p > budget {
                let s = (budget / p).sqrt();
                self.blocks[k] *= c(s, 0.0);
            }
        }
    }

    /// Scaled complex Gaussian draw rescaled to the full power budget.
    pub fn random_feasible(config: &SystemConfig, gm: &GmModel, seed: u64) -> Self {
        let mut r = rng(seed);
        let mut set = Self {
            blocks: (0..config.num_devices()).map(|k| complex_gaussian(&mut r, config.tx_dim(k), config.devices[k].feature_dim)).collect(),
        };
        set.fill_budget(config, gm);
        set
    }

    /// Zero-padded identity `V_k`, scaled to the power budget.
    pub fn identity_like(config: &SystemConfig, gm: &GmModel) -> Self {
        let mut set = Self {
            blocks: (0..config.num_devices())
                .map(|k| {
                    let (rows, cols) = (config.tx_dim(k), config.devices[k].feature_dim);
                    CMatrix::from_fn(rows, cols, |i, j| if i == j { c(1.0, 0.0) } else { ZERO })
                })
                .collect(),
        };
        set.fill_budget(config, gm);
        set
    }

    fn fill_budget(&mut self, config: &SystemConfig, gm: &GmModel) {
        for k in 0..self.blocks.len() {
            let p = self.power(k, config, gm);
            if p > 0.0 {
                let s = (config.devices[k].power / p).sqrt();
                self.blocks[k] *= c(s, 0.0);
            }
        }
    }

    pub fn check(&self, config: &SystemConfig) -> Result<()> {
        let ok = self.blocks.len() == config.num_devices()
            && self.blocks.iter().enumerate().all(|(k, v)| v.nrows() == config.tx_dim(k) && v.ncols() == config.devices[k].feature_dim);
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                op: "precoder",
                expected: format!("{} devices", config.num_devices()),
                found: format!("{} blocks", self.blocks.len()),
            })
        }
    }
}

/// Effective channel `H V` (`O N_r x D`).
pub fn effective_channel(precoders: &PrecoderSet, ch: &ChannelState) -> CMatrix {
    let d: usize = precoders.blocks.iter().map(|v| v.ncols()).sum();
    let mut hv = zeros(ch.rx_dim(), d);
    let mut c0 = 0;
    for (h, v) in ch.blocks.iter().zip(&precoders.blocks) {
        hv.view_mut((0, c0), (h.nrows(), v.ncols())).copy_from(&(h * v));
        c0 += v.ncols();
    }
    hv
}

/// `r = H blockdiag(V_k) z + n`, `n ~ CN(0, σ² I)`; `z` may hold several columns.
pub fn transmit<R: Rng + ?Sized>(z: &CMatrix, precoders: &PrecoderSet, ch: &ChannelState, rng: &mut R) -> Result<CMatrix> {
    let d: usize = precoders.blocks.iter().map(|v| v.ncols()).sum();
    if z.nrows() != d
        || precoders.blocks.len() != ch.blocks.len()
        || ch.blocks.iter().zip(&precoders.blocks).any(|(h, v)| h.ncols() != v.nrows())
    {
        return Err(Error::DimensionMismatch {
            op: "transmit",
            expected: format!("feature dim {d} consistent with channel"),
            found: format!("{}", z.nrows()),
        });
    }
    let clean = effective_channel(precoders, ch) * z;
    let noise = complex_gaussian(rng, clean.nrows(), clean.ncols());
    Ok(clean + noise.scale(ch.sigma))
}

/// `H V Σ V^H H^H` for a given covariance.
pub fn received_cov(hv: &CMatrix, cov: &CMatrix) -> CMatrix {
    hermitian_part(&(hv * cov * hv.adjoint()))
}

pub fn noise_identity(ch: &ChannelState) -> CMatrix {
    identity(ch.rx_dim()).scale(ch.noise_var())
}
