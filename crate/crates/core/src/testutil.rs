use crate::numerics::{hermitian_part, identity, CMatrix};
pub use crate::seed::{complex_gaussian as random_gauss, rng, SimRng};

pub fn random_matrix(r: &mut SimRng, rows: usize, cols: usize) -> CMatrix {
    random_gauss(r, rows, cols)
}

/// `G G^H / n + ridge * I`.
pub fn random_hpd(r: &mut SimRng, n: usize, ridge: f64) -> CMatrix {
    let g = random_gauss(r, n, n);
    hermitian_part(&((&g * g.adjoint()).unscale(n as f64) + identity(n).scale(ridge)))
}

/// Instance at receive SNR `snr_db` with the default path loss, noise floor
/// and precoding distortion.
pub fn physical_instance(
    seed: u64,
    devices: usize,
    feature_dim: usize,
    tx: usize,
    rx: usize,
    classes: usize,
    rank: usize,
    snr_db: f64,
) -> (crate::SystemConfig, crate::GmModel, crate::ChannelState) {
    use crate::model::{make_gm_model, Scenario, DEFAULT_NOISE_DBM};
    let cfg = crate::SystemConfig::uniform(devices, classes, feature_dim, tx, rx, 1, 1.0);
    let sc = Scenario::at_snr(cfg, crate::RicianParams::default(), DEFAULT_NOISE_DBM, snr_db);
    let gm = make_gm_model(&sc.config, rank, seed).unwrap();
    let ch = sc.channel(crate::seed::derive_seed(seed, 1)).unwrap();
    (sc.config, gm, ch)
}
