#![allow(dead_code)]

use taskcomm::model::{make_gm_model, Scenario, DEFAULT_NOISE_DBM};
use taskcomm::seed::derive_seed;
use taskcomm::{ChannelState, GmModel, RicianParams, SystemConfig};

/// Physically scaled instance at receive SNR `snr_db`.
pub struct Instance {
    pub config: SystemConfig,
    pub gm: GmModel,
    pub scenario: Scenario,
    pub channel: ChannelState,
}

pub fn instance(seed: u64, devices: usize, feature_dim: usize, tx: usize, rx: usize, classes: usize, rank: usize, snr_db: f64) -> Instance {
    let cfg = SystemConfig::uniform(devices, classes, feature_dim, tx, rx, 1, 1.0);
    let scenario = Scenario::at_snr(cfg, RicianParams::default(), DEFAULT_NOISE_DBM, snr_db);
    let gm = make_gm_model(&scenario.config, rank, seed).unwrap();
    let channel = scenario.channel(derive_seed(seed, 1)).unwrap();
    Instance { config: scenario.config.clone(), gm, scenario, channel }
}
