mod common;

use proptest::prelude::*;
use taskcomm::inference::{argmax, class_log_posteriors, e2e_loss, evaluate_accuracy, normalize_log_posteriors};
use taskcomm::model::{make_gm_model, sample_features, Scenario, DEFAULT_NOISE_DBM};
use taskcomm::seed::{complex_gaussian, rng};
use taskcomm::unfolded::channel_init;
use taskcomm::{MonteCarlo, PrecoderSet, Precoding, RicianParams, SystemConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posteriors_normalize_and_argmax_ignores_shifts(seed in 0u64..10_000, shift in -1e4f64..1e4) {
        let inst = common::instance(seed % 7, 2, 2, 2, 3, 3, 2, 6.0);
        let v = PrecoderSet::random_feasible(&inst.config, &inst.gm, seed);
        let r = complex_gaussian(&mut rng(seed), inst.channel.rx_dim(), 1).scale(1e-4);
        let post = class_log_posteriors(&r, &v, &inst.channel, &inst.gm).unwrap();
        let total: f64 = normalize_log_posteriors(&post).iter().map(|p| p.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = post.iter().map(|p| p + shift).collect();
        prop_assert_eq!(argmax(&shifted), argmax(&post));
    }

    #[test]
    fn e2e_loss_is_nonnegative(seed in 0u64..10_000) {
        let inst = common::instance(seed % 5, 2, 2, 2, 3, 3, 1, 0.0);
        let v = channel_init(&inst.config, &inst.gm, &inst.channel);
        let feats = sample_features(&inst.gm, 12, false, seed).unwrap();
        let loss = e2e_loss(&feats, std::slice::from_ref(&v), std::slice::from_ref(&inst.channel), &[inst.channel.sigma], &inst.gm, seed).unwrap();
        prop_assert!(loss >= 0.0);
    }
}

#[test]
fn accuracy_grows_with_snr_within_two_standard_errors() {
    let cfg = SystemConfig::uniform(2, 3, 2, 2, 4, 1, 1.0);
    let gm = make_gm_model(&cfg, 1, 3).unwrap();
    let mc = MonteCarlo::new(40, 200);
    let stats: Vec<_> = [-6.0, 0.0, 6.0, 12.0, 18.0]
        .iter()
        .map(|&snr| {
            let sc = Scenario::at_snr(cfg.clone(), RicianParams::default(), DEFAULT_NOISE_DBM, snr);
            evaluate_accuracy(&Precoding::bca_mm(), &gm, &sc, &mc, 17).unwrap()
        })
        .collect();
    for w in stats.windows(2) {
        let slack = 2.0 * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
        assert!(w[1].mean >= w[0].mean - slack, "{} then {}", w[0].mean, w[1].mean);
    }
}
