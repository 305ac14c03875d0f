//! Experiment configuration: a TOML document with one table per stage.
//! Every key is optional; omitted keys take the defaults below. Powers and
//! SNRs are given in dBm/dB and converted to linear mW here, once.

use serde::{Deserialize, Serialize};
use taskcomm::model::{db_to_linear, dbm_to_mw, pathloss_db};
use taskcomm::{DeviceConfig, RicianParams, Scenario, SystemConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Bca,
    BcaMm,
    DuBca,
    DuBcaMm,
    /// Zero-padded identity precoder at full power (baseline).
    Identity,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Bca => "bca",
            SolverKind::BcaMm => "bca-mm",
            SolverKind::DuBca => "du-bca",
            SolverKind::DuBcaMm => "du-bca-mm",
            SolverKind::Identity => "identity",
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            SolverKind::DuBca => Some(Variant::DuBca),
            SolverKind::DuBcaMm => Some(Variant::DuBcaMm),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Bca, Self::BcaMm, Self::DuBca, Self::DuBcaMm, Self::Identity].into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Record wall-clock time in `wall_ms`. Off by default so repeated runs
    /// produce byte-identical CSV.
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub devices: usize,
    pub classes: usize,
    /// Feature dimension per device, used unless `device_feature_dims` is set.
    pub feature_dim: usize,
    /// Transmit antennas per device, used unless `device_tx_antennas` is set.
    pub tx_antennas: usize,
    pub device_feature_dims: Vec<usize>,
    pub device_tx_antennas: Vec<usize>,
    pub rx_antennas: usize,
    pub slots: usize,
    pub eps2_feature: f64,
    pub eps2_precoding: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            devices: 2,
            classes: 3,
            feature_dim: 2,
            tx_antennas: 2,
            device_feature_dims: Vec::new(),
            device_tx_antennas: Vec::new(),
            rx_antennas: 4,
            slots: 1,
            eps2_feature: taskcomm::model::DEFAULT_EPS2_FEATURE,
            eps2_precoding: taskcomm::model::DEFAULT_EPS2_PRECODING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub kappa: f64,
    pub distance_m: f64,
    /// Overrides the log-distance model when set.
    pub pathloss_db: Option<f64>,
    /// Reuse one fading realization across all slots.
    pub hold_channel: bool,
    pub noise_dbm: f64,
    /// Receive SNR; sets the per-device power budget.
    pub snr_db: f64,
    /// Per-device transmit power; when set it takes precedence over `snr_db`.
    pub power_dbm: Option<f64>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            distance_m: 80.0,
            pathloss_db: None,
            hold_channel: true,
            noise_dbm: taskcomm::model::DEFAULT_NOISE_DBM,
            snr_db: 6.0,
            power_dbm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    /// Rank of each class subspace of the synthetic source.
    pub subspace_rank: usize,
    pub samples: usize,
    /// Rate-reduction ascent steps on the sampled features; 0 keeps the
    /// synthetic model exactly.
    pub steps: usize,
    pub lr: f64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self { subspace_rank: 1, samples: 600, steps: 50, lr: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub kind: SolverKind,
    pub max_iters: usize,
    pub inner_iters: usize,
    pub tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            kind: SolverKind::BcaMm,
            max_iters: taskcomm::bca::DEFAULT_MAX_ITERS,
            inner_iters: taskcomm::mm::DEFAULT_INNER_ITERS,
            tol: taskcomm::bca::DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnfoldedSection {
    pub layers: usize,
    pub mm_sublayers: usize,
    pub train_channels: usize,
    /// Training SNRs (dB) at the configured power; empty means the
    /// evaluation SNR only.
    pub train_snr_db: Vec<f64>,
    pub steps: usize,
    pub initial_step: f64,
    pub perturbation: f64,
}

impl Default for UnfoldedSection {
    fn default() -> Self {
        Self {
            layers: 3,
            mm_sublayers: 2,
            train_channels: 50,
            train_snr_db: Vec::new(),
            steps: 2000,
            initial_step: 0.05,
            perturbation: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    /// SPSA steps on the classification loss; 0 skips fine-tuning.
    pub steps: usize,
    pub samples: usize,
    /// Training channels reused from pretraining (the first `channels`).
    pub channels: usize,
    pub initial_step: f64,
    pub perturbation: f64,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self { steps: 200, samples: 1000, channels: 10, initial_step: 0.05, perturbation: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub channels: usize,
    pub samples_per_channel: usize,
    pub noise_draws: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { channels: 100, samples_per_channel: 500, noise_draws: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// SNR grid (dB); empty means the single configured SNR.
    pub snr_db: Vec<f64>,
    /// Slot counts; empty means the single configured count.
    pub slots: Vec<usize>,
    /// Solvers compared at every point; empty means `solver.kind` only.
    pub solvers: Vec<SolverKind>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub system: SystemSection,
    pub channel: ChannelSection,
    pub features: FeatureSection,
    pub solver: SolverSection,
    pub unfolded: UnfoldedSection,
    pub finetune: FinetuneSection,
    pub evaluation: EvaluationSection,
    pub sweep: SweepSection,
}

/// Invalid or unparsable configuration; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(format!("config does not parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.system;
        if s.devices == 0 {
            return Err(bad("system.devices must be >= 1"));
        }
        for (name, list) in [("device_feature_dims", &s.device_feature_dims), ("device_tx_antennas", &s.device_tx_antennas)] {
            if !list.is_empty() && list.len() != s.devices {
                return Err(bad(format!("system.{name} must list one entry per device")));
            }
        }
        let c = &self.channel;
        for (name, v) in [("kappa", c.kappa), ("distance_m", c.distance_m), ("noise_dbm", c.noise_dbm), ("snr_db", c.snr_db)] {
            if !v.is_finite() {
                return Err(bad(format!("channel.{name} must be finite")));
            }
        }
        if c.kappa < 0.0 || c.distance_m <= 0.0 {
            return Err(bad("channel.kappa must be >= 0 and channel.distance_m > 0"));
        }
        if self.features.samples < self.system.classes {
            return Err(bad("features.samples must cover every class"));
        }
        if self.features.subspace_rank == 0 {
            return Err(bad("features.subspace_rank must be >= 1"));
        }
        if self.solver.max_iters == 0 {
            return Err(bad("solver.max_iters must be >= 1"));
        }
        if self.solver.kind == SolverKind::BcaMm && self.solver.inner_iters == 0 {
            return Err(bad("solver.inner_iters must be >= 1"));
        }
        let u = &self.unfolded;
        if u.layers == 0 || u.train_channels == 0 {
            return Err(bad("unfolded.layers and unfolded.train_channels must be >= 1"));
        }
        if u.mm_sublayers == 0 && (self.solver.kind == SolverKind::DuBcaMm || self.sweep.solvers.contains(&SolverKind::DuBcaMm)) {
            return Err(bad("unfolded.mm_sublayers must be >= 1"));
        }
        let f = &self.finetune;
        if f.steps > 0 && (f.samples == 0 || f.channels == 0 || f.channels > u.train_channels) {
            return Err(bad("finetune needs samples >= 1 and 1 <= channels <= unfolded.train_channels"));
        }
        let e = &self.evaluation;
        if e.channels == 0 || e.samples_per_channel == 0 || e.noise_draws == 0 {
            return Err(bad("evaluation channels, samples_per_channel and noise_draws must be >= 1"));
        }
        if self.sweep.slots.contains(&0) {
            return Err(bad("sweep.slots entries must be >= 1"));
        }
        self.system_config(self.system.slots, self.channel.snr_db).validate().map_err(|e| bad(e.to_string()))?;
        Ok(())
    }

    pub fn rician(&self) -> RicianParams {
        let c = &self.channel;
        let mut r = RicianParams::new(c.kappa, c.distance_m).with_hold_channel(c.hold_channel);
        if let Some(pl) = c.pathloss_db {
            r = r.with_pathloss_db(pl);
        }
        r
    }

    pub fn pathloss_db(&self) -> f64 {
        self.channel.pathloss_db.unwrap_or_else(|| pathloss_db(self.channel.distance_m))
    }

    /// Receive SNR actually in effect.
    pub fn snr_db(&self) -> f64 {
        match self.channel.power_dbm {
            Some(p) => p - self.pathloss_db() - self.channel.noise_dbm,
            None => self.channel.snr_db,
        }
    }

    /// Per-device transmit power (dBm) giving `snr_db`.
    pub fn power_dbm_at(&self, snr_db: f64) -> f64 {
        snr_db + self.pathloss_db() + self.channel.noise_dbm
    }

    pub fn system_config(&self, slots: usize, snr_db: f64) -> SystemConfig {
        let s = &self.system;
        let power = dbm_to_mw(self.power_dbm_at(snr_db));
        let devices = (0..s.devices)
            .map(|k| DeviceConfig {
                feature_dim: s.device_feature_dims.get(k).copied().unwrap_or(s.feature_dim),
                tx_antennas: s.device_tx_antennas.get(k).copied().unwrap_or(s.tx_antennas),
                power,
            })
            .collect();
        SystemConfig {
            devices,
            classes: s.classes,
            rx_antennas: s.rx_antennas,
            slots,
            eps2_feature: s.eps2_feature,
            eps2_precoding: s.eps2_precoding,
        }
    }

    pub fn scenario(&self, slots: usize, snr_db: f64) -> Scenario {
        Scenario { config: self.system_config(slots, snr_db), rician: self.rician(), noise_var: dbm_to_mw(self.channel.noise_dbm) }
    }

    /// Noise standard deviations for the training SNRs at the power of
    /// `snr_db`.
    pub fn train_sigmas(&self, snr_db: f64) -> Vec<f64> {
        let noise_var = dbm_to_mw(self.channel.noise_dbm);
        if self.unfolded.train_snr_db.is_empty() {
            return vec![noise_var.sqrt()];
        }
        self.unfolded.train_snr_db.iter().map(|&t| (noise_var * db_to_linear(snr_db - t)).sqrt()).collect()
    }

    pub fn sweep_solvers(&self) -> Vec<SolverKind> {
        if self.sweep.solvers.is_empty() {
            vec![self.solver.kind]
        } else {
            self.sweep.solvers.clone()
        }
    }

    /// Sweep grid in row order: slots outer, SNR inner.
    pub fn sweep_points(&self) -> Vec<(usize, f64)> {
        let slots = if self.sweep.slots.is_empty() { vec![self.system.slots] } else { self.sweep.slots.clone() };
        let snrs = if self.sweep.snr_db.is_empty() { vec![self.snr_db()] } else { self.sweep.snr_db.clone() };
        slots.iter().flat_map(|&o| snrs.iter().map(move |&s| (o, s))).collect()
    }
}
