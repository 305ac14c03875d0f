//! Fixtures shared by the benchmarks.

use taskcomm::model::{make_gm_model, DEFAULT_NOISE_DBM};
use taskcomm::seed::derive_seed;
use taskcomm::{ChannelState, GmModel, Result, RicianParams, Scenario, SystemConfig};

/// Two devices with two features and antennas each, a four-antenna server,
/// three rank-1 classes at 6 dB.
pub fn reference_instance(seed: u64) -> Result<(SystemConfig, GmModel, ChannelState)> {
    let cfg = SystemConfig::uniform(2, 3, 2, 2, 4, 1, 1.0);
    let scenario = Scenario::at_snr(cfg, RicianParams::default(), DEFAULT_NOISE_DBM, 6.0);
    let gm = make_gm_model(&scenario.config, 1, seed)?;
    let ch = scenario.channel(derive_seed(seed, 1))?;
    Ok((scenario.config, gm, ch))
}
