//! Simultaneous-perturbation stochastic approximation (maximization).
//!
//! Each step evaluates the objective at `x ± c_t Δ` with a Rademacher
//! direction `Δ` and moves along `(f⁺ − f⁻)/(2c_t) Δ`. Gains follow the
//! usual schedules `a_t = a/(t + A)^0.602` and `c_t = c/t^0.101`.
//! Every evaluated point is a candidate, so the best one seen is returned;
//! with a deterministic objective this makes the result never worse than
//! the start.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpsaConfig {
    pub steps: usize,
    /// Target size of the first step, per coordinate. The raw gain `a` is
    /// calibrated from a few gradient estimates at the start.
    pub initial_step: f64,
    /// Perturbation size `c`.
    pub perturbation: f64,
    /// Stability offset `A`; defaults to a tenth of the step budget.
    pub stability: Option<f64>,
    pub alpha: f64,
    pub gamma: f64,
    /// Gradient samples used to calibrate `a`.
    pub calibration_samples: usize,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self { steps: 2000, initial_step: 0.05, perturbation: 0.05, stability: None, alpha: 0.602, gamma: 0.101, calibration_samples: 4 }
    }
}

#[derive(Debug, Clone)]
pub struct SpsaOutcome {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub initial_value: f64,
    pub evaluations: usize,
}

fn rademacher<R: Rng>(r: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

fn offset(x: &[f64], delta: &[f64], by: f64) -> Vec<f64> {
    x.iter().zip(delta).map(|(a, d)| a + by * d).collect()
}

/// Maximizes `f` starting from `x0`. Non-finite evaluations are treated as
/// failures: the step is skipped and the point is never reported as best.
pub fn spsa_maximize<F>(f: F, x0: &[f64], cfg: &SpsaConfig, seed: u64) -> SpsaOutcome
where
    F: Fn(&[f64]) -> f64,
{
    let mut r = rng(seed);
    let n = x0.len();
    let initial_value = f(x0);
    let mut evaluations = 1;
    let mut best = x0.to_vec();
    let mut best_value = if initial_value.is_finite() { initial_value } else { f64::NEG_INFINITY };
    if cfg.steps == 0 || n == 0 {
        return SpsaOutcome { best, best_value: initial_value, initial_value, evaluations };
    }

    let stability = cfg.stability.unwrap_or(0.1 * cfg.steps as f64);
    let consider = |x: &[f64], value: f64, best: &mut Vec<f64>, best_value: &mut f64| {
        if value.is_finite() && value > *best_value {
            *best_value = value;
            best.clear();
            best.extend_from_slice(x);
        }
    };

    // Calibrate a so the first step moves each coordinate by about initial_step.
    let mut magnitude = 0.0;
    let mut samples = 0;
    for _ in 0..cfg.calibration_samples.max(1) {
        let delta = rademacher(&mut r, n);
        let plus = offset(x0, &delta, cfg.perturbation);
        let minus = offset(x0, &delta, -cfg.perturbation);
        let (fp, fm) = (f(&plus), f(&minus));
        evaluations += 2;
        consider(&plus, fp, &mut best, &mut best_value);
        consider(&minus, fm, &mut best, &mut best_value);
        if fp.is_finite() && fm.is_finite() {
            magnitude += ((fp - fm) / (2.0 * cfg.perturbation)).abs();
            samples += 1;
        }
    }
    let magnitude = if samples > 0 { magnitude / samples as f64 } else { 0.0 };
    let gain = if magnitude > 0.0 { cfg.initial_step * (stability + 1.0).powf(cfg.alpha) / magnitude } else { cfg.initial_step };

    let mut x = x0.to_vec();
    for t in 1..=cfg.steps {
        let a_t = gain / (t as f64 + stability).powf(cfg.alpha);
        let c_t = cfg.perturbation / (t as f64).powf(cfg.gamma);
        let delta = rademacher(&mut r, n);
        let plus = offset(&x, &delta, c_t);
        let minus = offset(&x, &delta, -c_t);
        let (fp, fm) = (f(&plus), f(&minus));
        evaluations += 2;
        consider(&plus, fp, &mut best, &mut best_value);
        consider(&minus, fm, &mut best, &mut best_value);
        if !(fp.is_finite() && fm.is_finite()) {
            continue;
        }
        let g = (fp - fm) / (2.0 * c_t);
        for (xi, d) in x.iter_mut().zip(&delta) {
            *xi += a_t * g * d;
        }
    }
    let last = f(&x);
    evaluations += 1;
    consider(&x, last, &mut best, &mut best_value);
    SpsaOutcome { best, best_value, initial_value, evaluations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_on_a_quadratic() {
        let target: Vec<f64> = (0..10).map(|i| (i as f64 - 4.5) * 0.3).collect();
        let weights: Vec<f64> = (0..10).map(|i| 1.0 + 0.2 * i as f64).collect();
        let f = |x: &[f64]| -> f64 { -x.iter().zip(&target).zip(&weights).map(|((a, b), w)| w * (a - b).powi(2)).sum::<f64>() };
        let cfg = SpsaConfig { steps: 5000, initial_step: 0.2, perturbation: 0.1, ..SpsaConfig::default() };
        let out = spsa_maximize(f, &[0.0; 10], &cfg, 7);
        let err = out.best.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "max coordinate error {err}");
    }

    #[test]
    fn zero_steps_returns_start() {
        let out = spsa_maximize(|x| -x[0] * x[0], &[1.5], &SpsaConfig { steps: 0, ..Default::default() }, 1);
        assert_eq!(out.best, vec![1.5]);
        assert_eq!(out.best_value, out.initial_value);
    }

    #[test]
    fn never_reports_worse_than_start() {
        // Rugged objective where steps often overshoot.
        let f = |x: &[f64]| -> f64 { (5.0 * x[0]).sin() - x[1].abs() };
        for seed in 0..10 {
            let out = spsa_maximize(f, &[0.3, 0.2], &SpsaConfig { steps: 50, ..Default::default() }, seed);
            assert!(out.best_value >= out.initial_value);
            assert_eq!(f(&out.best), out.best_value);
        }
    }

    #[test]
    fn skips_non_finite_evaluations() {
        let f = |x: &[f64]| if x[0] > 0.5 { f64::NAN } else { x[0] };
        let out = spsa_maximize(f, &[0.0], &SpsaConfig { steps: 200, ..Default::default() }, 3);
        assert!(out.best_value.is_finite());
        assert!(out.best[0] <= 0.5);
    }
}
