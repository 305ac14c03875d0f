//! End-to-end property checks shared by `taskcomm selftest` (reduced sizes)
//! and the acceptance suite (full sizes). Each check returns a verdict with
//! the measured numbers rather than panicking, so a suite can report every
//! result before failing.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use taskcomm::bca::{bca_solve, solve_with_rule, v_step_bisection, Qcqp, VStepRule, DEFAULT_TOL};
use taskcomm::inference::{channel_accuracy, evaluate_accuracy};
use taskcomm::mcr2::{channel_mcr2, feature_mcr2, feature_mcr2_grad};
use taskcomm::mm::{bca_mm_solve, eta_bound, mm_v_step, surrogate, DEFAULT_INNER_ITERS};
use taskcomm::model::{make_gm_model, sample_features, Scenario, DEFAULT_NOISE_DBM};
use taskcomm::numerics::{c, diag_real, frobenius, hermitian_eigen, hermitian_part, norm_sqr, real, CMatrix};
use taskcomm::seed::{complex_gaussian, derive_seed, rng, SimRng};
use taskcomm::unfolded::{anchored_net, channel_init, du_forward, e2e_finetune, forward_all, train_unfolded, SpsaConfig, TrainingSet};
use taskcomm::{
    ChannelState, FeatureBatch, GmModel, HermitianPsd, MonteCarlo, PrecoderSet, Precoding, PrecodingProblem, RicianParams, SystemConfig,
    UnfoldedNet, Variant,
};

/// Verdict of one check.
#[derive(Debug, Clone)]
pub struct Check {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {:<26} {:>7.1}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

/// Problem sizes for a suite run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scale {
    pub monotone_instances: usize,
    pub kkt_instances: usize,
    pub kkt_points: usize,
    pub majorizer_triples: usize,
    pub equivalence_instances: usize,
    pub anchored_instances: usize,
    pub gradient_instances: usize,
    pub training_steps: usize,
    pub accuracy_channels: usize,
    pub accuracy_samples: usize,
    pub slot_channels: usize,
    pub slot_samples: usize,
    pub finetune_runs: usize,
}

impl Scale {
    pub fn full() -> Self {
        Self {
            monotone_instances: 100,
            kkt_instances: 100,
            kkt_points: 10_000,
            majorizer_triples: 1000,
            equivalence_instances: 50,
            anchored_instances: 20,
            gradient_instances: 50,
            training_steps: 2000,
            accuracy_channels: 100,
            accuracy_samples: 2000,
            slot_channels: 200,
            slot_samples: 100,
            finetune_runs: 100,
        }
    }

    /// Sizes for a quick smoke run. The paired-accuracy check keeps its full
    /// size: with fewer samples per channel the comparison is dominated by
    /// Monte-Carlo noise.
    pub fn quick() -> Self {
        Self {
            monotone_instances: 20,
            kkt_instances: 20,
            kkt_points: 1000,
            majorizer_triples: 200,
            equivalence_instances: 6,
            anchored_instances: 5,
            gradient_instances: 10,
            training_steps: 300,
            accuracy_channels: 100,
            accuracy_samples: 2000,
            slot_channels: 200,
            slot_samples: 100,
            finetune_runs: 10,
        }
    }
}

/// Executes the CLI with the given arguments; used by the determinism check.
pub type Runner<'a> = &'a (dyn Fn(&[String]) -> anyhow::Result<()> + Sync);

fn timed(id: u32, name: &'static str, body: impl FnOnce() -> (bool, String)) -> Check {
    let start = Instant::now();
    let (passed, detail) = body();
    Check { id, name, passed, detail, elapsed: start.elapsed() }
}

fn failed(e: impl fmt::Display) -> (bool, String) {
    (false, format!("error: {e}"))
}

/// Physically scaled single-slot instance.
pub fn physical_instance(
    seed: u64,
    devices: usize,
    feature_dim: usize,
    tx: usize,
    rx: usize,
    classes: usize,
    rank: usize,
    snr_db: f64,
) -> taskcomm::Result<(SystemConfig, GmModel, ChannelState)> {
    let cfg = SystemConfig::uniform(devices, classes, feature_dim, tx, rx, 1, 1.0);
    let sc = Scenario::at_snr(cfg, RicianParams::default(), DEFAULT_NOISE_DBM, snr_db);
    let gm = make_gm_model(&sc.config, rank, seed)?;
    let ch = sc.channel(derive_seed(seed, 1))?;
    Ok((sc.config, gm, ch))
}

const SNR_GRID: [f64; 5] = [-6.0, 0.0, 6.0, 12.0, 18.0];

/// Random dimensions with `K ≤ 3`, `2 ≤ D ≤ 8`, `O·N_r ≤ 8`, at one of the
/// grid SNRs. The subspace rank stays below `D`: at rank `D` every class
/// covariance is `I/D`, the objective vanishes identically and its trace is
/// pure rounding noise.
fn random_instance(seed: u64) -> taskcomm::Result<(SystemConfig, GmModel, ChannelState)> {
    let pick = |stream: u64, lo: u64, hi: u64| (lo + derive_seed(seed, stream) % (hi - lo + 1)) as usize;
    let devices = pick(1, 1, 3);
    let slots = pick(2, 1, 2);
    let rx = pick(3, 1, 8 / slots as u64);
    let classes = pick(4, 2, 4);
    let mut cfg = SystemConfig::uniform(devices, classes, 1, 1, rx, slots, 1.0);
    for k in 0..devices {
        let least = if devices == 1 { 2 } else { 1 };
        cfg.devices[k].feature_dim = pick(10 + k as u64, least, 8 / devices as u64);
        cfg.devices[k].tx_antennas = pick(20 + k as u64, 1, 3);
    }
    let rank = pick(5, 1, (cfg.feature_dim() - 1).min(3) as u64);
    let snr = SNR_GRID[pick(6, 0, 4)];
    let sc = Scenario::at_snr(cfg, RicianParams::default().with_hold_channel(seed.is_multiple_of(2)), DEFAULT_NOISE_DBM, snr);
    let gm = make_gm_model(&sc.config, rank, derive_seed(seed, 7))?;
    let ch = sc.channel(derive_seed(seed, 8))?;
    Ok((sc.config, gm, ch))
}

/// BCA objective trace is non-decreasing per sweep.
pub fn bca_monotonicity(instances: usize) -> Check {
    timed(1, "bca-monotonicity", || {
        let start = Instant::now();
        let results: taskcomm::Result<Vec<(usize, f64)>> = (0..instances as u64)
            .into_par_iter()
            .map(|seed| {
                let (cfg, gm, ch) = random_instance(seed)?;
                let p = PrecodingProblem::new(&cfg, &gm, &ch)?;
                let st = bca_solve(&p, &channel_init(&cfg, &gm, &ch), 50, DEFAULT_TOL)?;
                let worst = st
                    .objective_trace
                    .windows(2)
                    .map(|w| (w[0] - w[1]) / w[0].abs().max(w[1].abs()).max(f64::MIN_POSITIVE))
                    .fold(f64::NEG_INFINITY, f64::max);
                Ok((st.iterations, worst))
            })
            .collect();
        match results {
            Ok(r) => {
                let worst = r.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
                let sweeps: usize = r.iter().map(|x| x.0).sum();
                (
                    worst <= 1e-9 && start.elapsed() < Duration::from_secs(120),
                    format!("{instances} instances, {sweeps} sweeps, worst relative decrease {worst:.2e} (limit 1e-9, time limit 120 s)"),
                )
            }
            Err(e) => failed(e),
        }
    })
}

/// Uniform draw from the ball `‖x‖² ≤ power`. The radius uses
/// `1 − exp(−|h|²)`, which is uniform on (0, 1) for `h ~ CN(0, 1)`.
fn ball_point(r: &mut SimRng, dim: usize, power: f64) -> CMatrix {
    let g = complex_gaussian(r, dim, 1);
    let h = complex_gaussian(r, 1, 1)[(0, 0)].norm_sqr();
    let u = -(-h).exp_m1();
    g.scale(power.sqrt() * u.powf(1.0 / (2 * dim) as f64) / g.norm())
}

fn sphere_point(r: &mut SimRng, dim: usize, power: f64) -> CMatrix {
    let g = complex_gaussian(r, dim, 1);
    g.scale(power.sqrt() / g.norm())
}

/// The V-step QCQP of device `k` at the channel initializer.
fn instance_qcqp(seed: u64) -> taskcomm::Result<Qcqp> {
    let (cfg, gm, ch) = random_instance(derive_seed(seed, 1000))?;
    let p = PrecodingProblem::new(&cfg, &gm, &ch)?;
    let v = channel_init(&cfg, &gm, &ch);
    let u = p.u_step(&v)?;
    let w = p.w_step(&u, &v)?;
    let k = (seed as usize) % cfg.num_devices();
    Ok(p.assemble_qcqp(&u, &w, &v, k))
}

/// Nearest PSD matrix: negative eigenvalues clamped to zero. The assembled
/// `N_k` is PSD in exact arithmetic; roundoff amplified by the whitening of
/// a rank-deficient feature block leaves tiny negative eigenvalues, which
/// the V-step discards.
fn psd_projection(n: &CMatrix) -> (CMatrix, f64) {
    let (values, q) = hermitian_eigen(n);
    let clamped: Vec<f64> = values.iter().map(|&x| x.max(0.0)).collect();
    let top = values.iter().fold(0.0f64, |m, &x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let discarded = values.iter().fold(0.0f64, |m, &x| m.max(-x)) / top;
    (hermitian_part(&(&q * diag_real(&clamped) * q.adjoint())), discarded)
}

/// Bisection V-step satisfies the KKT conditions and beats random feasible
/// points.
pub fn v_step_kkt(instances: usize, points: usize) -> Check {
    timed(2, "v-step-kkt", || {
        let results: taskcomm::Result<Vec<(f64, f64, f64, bool)>> = (0..instances as u64)
            .into_par_iter()
            .map(|seed| {
                let qp = instance_qcqp(seed)?;
                let step = v_step_bisection(&qp.b, &qp.n, qp.power)?;
                let used = norm_sqr(&step.v);
                let dim = qp.b.nrows();
                let (n_psd, discarded) = psd_projection(&qp.n);
                let shifted = n_psd + CMatrix::identity(dim, dim) * real(step.lambda);
                let bnorm = qp.b.norm().max(f64::MIN_POSITIVE);
                let stationarity = (shifted * &step.v - &qp.b).norm() / bnorm;
                let slackness = if step.lambda > 0.0 { (qp.power - used).abs() / qp.power } else { 0.0 };
                let feasible = step.lambda >= 0.0 && used <= qp.power * (1.0 + 1e-12);
                let best = qp.objective(&step.v);
                let tol = 1e-10 * (best.abs() + 2.0 * bnorm * qp.power.sqrt());
                let mut r = rng(derive_seed(seed, 2000));
                let beaten = (0..points).all(|i| {
                    let x = if i % 2 == 0 { ball_point(&mut r, dim, qp.power) } else { sphere_point(&mut r, dim, qp.power) };
                    best <= qp.objective(&x) + tol
                });
                Ok((stationarity, slackness, discarded, feasible && beaten))
            })
            .collect();
        match results {
            Ok(r) => {
                let stat = r.iter().map(|x| x.0).fold(0.0, f64::max);
                let slack = r.iter().map(|x| x.1).fold(0.0, f64::max);
                let discarded = r.iter().map(|x| x.2).fold(0.0, f64::max);
                let ok = r.iter().all(|x| x.3);
                (
                    ok && stat <= 1e-8 && slack <= 1e-8,
                    format!(
                        "{instances} instances x {points} points: slackness {slack:.1e}, stationarity {stat:.1e} (limit 1e-8; largest negative eigenvalue of N clamped {discarded:.1e} relative), feasible and optimal: {ok}"
                    ),
                )
            }
            Err(e) => failed(e),
        }
    })
}

fn random_qcqp(r: &mut SimRng, dim: usize, rank: usize) -> Qcqp {
    let g = complex_gaussian(r, dim, rank);
    let n = hermitian_part(&(&g * g.adjoint()).unscale(rank as f64));
    let h = complex_gaussian(r, 1, 1)[(0, 0)].norm_sqr();
    Qcqp { b: complex_gaussian(r, dim, 1).scale(1.0 + 2.0 * h), n, power: 0.1 + h }
}

/// The MM surrogate upper-bounds the QCQP objective and touches it at the
/// anchor.
pub fn majorizer(triples: usize) -> Check {
    timed(3, "majorizer-validity", || {
        let mut r = rng(31);
        let mut worst_gap: f64 = 0.0;
        let mut worst_touch: f64 = 0.0;
        for t in 0..triples {
            let dim = 1 + t % 8;
            let rank = 1 + (t / 8) % (dim + 2);
            let qp = random_qcqp(&mut r, dim, rank);
            let eta = eta_bound(&qp.n);
            let anchor = complex_gaussian(&mut r, dim, 1);
            let v =
                if t % 3 == 0 { ball_point(&mut r, dim, qp.power) } else { complex_gaussian(&mut r, dim, 1).scale(1.0 + (t % 5) as f64) };
            let scale = |x: &CMatrix| 1.0 + qp.objective(x).abs() + eta * norm_sqr(x) + qp.b.norm() * x.norm();
            let gap = (surrogate(&qp.b, &qp.n, eta, &v, &anchor) - qp.objective(&v)) / (scale(&v) + scale(&anchor));
            let touch = (surrogate(&qp.b, &qp.n, eta, &anchor, &anchor) - qp.objective(&anchor)).abs() / scale(&anchor);
            worst_gap = worst_gap.min(gap);
            worst_touch = worst_touch.max(touch);
        }
        (
            worst_gap >= -1e-10 && worst_touch <= 1e-10,
            format!("{triples} triples: most negative gap {worst_gap:.1e}, anchor mismatch {worst_touch:.1e} (limit 1e-10)"),
        )
    })
}

/// BCA and BCA-MM reach the same objective at 50 outer iterations.
pub fn solver_equivalence(instances: usize) -> Check {
    const INNER: usize = 200;
    timed(4, "solver-equivalence", || {
        let start = Instant::now();
        let results: taskcomm::Result<Vec<f64>> = (0..instances as u64)
            .into_par_iter()
            .map(|seed| {
                let snr = [0.0, 6.0, 12.0][seed as usize % 3];
                let (cfg, gm, ch) = physical_instance(seed, 2, 2, 2, 4, 3, 2, snr)?;
                let p = PrecodingProblem::new(&cfg, &gm, &ch)?;
                let v0 = PrecoderSet::random_feasible(&cfg, &gm, seed);
                let a = bca_solve(&p, &v0, 50, DEFAULT_TOL)?.objective();
                let b = bca_mm_solve(&p, &v0, 50, INNER, DEFAULT_TOL)?.objective();
                Ok((a - b).abs() / a.abs().max(b.abs()))
            })
            .collect();
        match results {
            Ok(d) => {
                let worst = d.iter().copied().fold(0.0, f64::max);
                let within = d.iter().filter(|&&x| x <= 1e-4).count();
                (
                    within == d.len() && start.elapsed() < Duration::from_secs(300),
                    format!(
                        "{within}/{instances} within 1e-4 (inner_iters {INNER}), worst relative difference {worst:.1e} (time limit 300 s)"
                    ),
                )
            }
            Err(e) => failed(e),
        }
    })
}

fn relative_block_diff(a: &PrecoderSet, b: &PrecoderSet) -> f64 {
    a.blocks.iter().zip(&b.blocks).map(|(x, y)| frobenius(&(x - y)) / frobenius(y).max(f64::MIN_POSITIVE)).fold(0.0, f64::max)
}

/// One anchored DU-BCA-MM layer equals one BCA-MM iteration.
pub fn anchored_equivalence(instances: usize) -> Check {
    timed(5, "anchored-unfolding", || {
        let results: taskcomm::Result<Vec<(f64, f64)>> = (0..instances as u64)
            .into_par_iter()
            .map(|seed| {
                let snr = SNR_GRID[seed as usize % SNR_GRID.len()];
                let (cfg, gm, ch) = physical_instance(100 + seed, 2, 2, 2, 3, 3, 2, snr)?;
                let p = PrecodingProblem::new(&cfg, &gm, &ch)?;
                let v0 = channel_init(&cfg, &gm, &ch);
                let net = anchored_net(Variant::DuBcaMm, std::slice::from_ref(&p), std::slice::from_ref(&v0), 1, DEFAULT_INNER_ITERS)?;
                let layer = du_forward(&net, &p, &v0)?;
                let base = solve_with_rule(&p, &v0, VStepRule::Mm { inner_iters: DEFAULT_INNER_ITERS }, 1, 0.0)?;
                let obj = (p.objective(&layer)? - base.objective()).abs() / base.objective().abs();
                Ok((relative_block_diff(&layer, &base.precoders), obj))
            })
            .collect();
        match results {
            Ok(d) => {
                let v = d.iter().map(|x| x.0).fold(0.0, f64::max);
                let o = d.iter().map(|x| x.1).fold(0.0, f64::max);
                (
                    v <= 1e-6 && o <= 1e-6,
                    format!("{instances} instances: precoder deviation {v:.1e}, objective deviation {o:.1e} (limit 1e-6)"),
                )
            }
            Err(e) => failed(e),
        }
    })
}

/// Largest deviation of the analytic gradient from central differences,
/// relative to the largest gradient entry.
fn gradient_deviation(seed: u64, dim: usize, samples: usize, classes: usize) -> taskcomm::Result<f64> {
    const EPS2: f64 = 0.5;
    const H: f64 = 1e-5;
    let z = complex_gaussian(&mut rng(seed), dim, samples);
    let labels = (0..samples).map(|m| m % classes).collect();
    let batch = FeatureBatch::new(z, labels, classes)?;
    let g = feature_mcr2_grad(&batch, EPS2)?;
    let scale = g.iter().map(|x| x.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for col in 0..samples {
        for row in 0..dim {
            let mut fd = [0.0; 2];
            for (part, dir) in [c(1.0, 0.0), c(0.0, 1.0)].into_iter().enumerate() {
                let mut plus = batch.clone();
                plus.samples[(row, col)] += dir * H;
                let mut minus = batch.clone();
                minus.samples[(row, col)] -= dir * H;
                fd[part] = (feature_mcr2(&plus, EPS2)? - feature_mcr2(&minus, EPS2)?) / (2.0 * H);
            }
            // d/dRe = 2 Re G and d/dIm = 2 Im G for the conjugate Wirtinger gradient
            worst = worst.max((c(fd[0] / 2.0, fd[1] / 2.0) - g[(row, col)]).norm() / scale);
        }
    }
    Ok(worst)
}

pub fn gradient_check(instances: usize) -> Check {
    timed(6, "gradient-check", || {
        let results: taskcomm::Result<Vec<f64>> = (0..instances as u64)
            .into_par_iter()
            .map(|s| gradient_deviation(derive_seed(s, 6), 2 + s as usize % 5, 8 + s as usize % 9, 2 + s as usize % 3))
            .collect();
        match results {
            Ok(d) => {
                let worst = d.iter().copied().fold(0.0, f64::max);
                (worst < 1e-6, format!("{instances} instances: max relative deviation {worst:.1e} (limit 1e-6)"))
            }
            Err(e) => failed(e),
        }
    })
}

fn desk_training_set() -> taskcomm::Result<TrainingSet> {
    let cfg = SystemConfig::uniform(2, 3, 2, 2, 4, 1, 1.0);
    let sc = Scenario::at_snr(cfg, RicianParams::default(), DEFAULT_NOISE_DBM, 6.0);
    let gm = make_gm_model(&sc.config, 2, 1)?;
    let channels = (0..50).map(|i| sc.channel(derive_seed(7, i))).collect::<taskcomm::Result<Vec<_>>>()?;
    TrainingSet::new(&sc.config, &gm, &channels, &[sc.sigma()], sc.config.eps2_precoding)
}

/// Trained 3-layer DU-BCA-MM beats 3 iterations of BCA-MM on its training
/// channels.
pub fn training_gain(steps: usize) -> Check {
    timed(7, "unfolded-training-gain", || {
        let run = || -> taskcomm::Result<(f64, f64, f64, f64)> {
            let set = desk_training_set()?;
            let problems = set.problems()?;
            let mean_base = |iters: usize| -> taskcomm::Result<f64> {
                let values = problems
                    .par_iter()
                    .zip(&set.inits)
                    .map(|(p, v0)| Ok(solve_with_rule(p, v0, VStepRule::Mm { inner_iters: DEFAULT_INNER_ITERS }, iters, 0.0)?.objective()))
                    .collect::<taskcomm::Result<Vec<f64>>>()?;
                Ok(values.iter().sum::<f64>() / values.len() as f64)
            };
            let (three, converged) = (mean_base(3)?, mean_base(50)?);
            let net = anchored_net(Variant::DuBcaMm, &problems, &set.inits, 3, 2)?;
            let cfg = SpsaConfig { steps, ..SpsaConfig::default() };
            let out = train_unfolded(&net, &set, &cfg, 3)?;
            Ok((three, converged, out.initial_objective, out.final_objective))
        };
        let limit = Duration::from_secs(30 * 60);
        let start = Instant::now();
        match run() {
            Ok((three, converged, initial, trained)) => {
                let share = (trained - three) / (converged - three);
                (
                    trained > three && start.elapsed() < limit,
                    format!(
                        "{steps} steps: trained {trained:.4} vs 3-iteration BCA-MM {three:.4} (anchored start {initial:.4}, 50 iterations {converged:.4}); {:.0}% of the gap closed (target 5%)",
                        100.0 * share
                    ),
                )
            }
            Err(e) => failed(e),
        }
    })
}

fn desk_scenario(slots: usize, rx: usize, snr_db: f64) -> Scenario {
    let cfg = SystemConfig::uniform(2, 3, 2, 2, rx, slots, 1.0);
    Scenario::at_snr(cfg, RicianParams::default(), DEFAULT_NOISE_DBM, snr_db)
}

/// BCA precoding matches or beats the identity precoder channel by channel.
pub fn accuracy_gain(channels: usize, samples: usize) -> Check {
    timed(8, "precoding-accuracy-gain", || {
        let sc = desk_scenario(1, 4, 6.0);
        let run = || -> taskcomm::Result<(f64, f64, usize)> {
            let gm = make_gm_model(&sc.config, 1, 3)?;
            let mc = MonteCarlo::new(channels, samples);
            let bca = evaluate_accuracy(&Precoding::bca(), &gm, &sc, &mc, 5)?;
            let id = evaluate_accuracy(&Precoding::Identity, &gm, &sc, &mc, 5)?;
            let wins = bca.per_channel.iter().zip(&id.per_channel).filter(|(b, i)| b >= i).count();
            Ok((bca.mean, id.mean, wins))
        };
        match run() {
            Ok((b, i, wins)) => {
                let needed = (95 * channels).div_ceil(100);
                (
                    wins >= needed,
                    format!("BCA >= identity on {wins}/{channels} channels (need {needed}); mean {b:.4} vs {i:.4}, {samples} samples each"),
                )
            }
            Err(e) => failed(e),
        }
    })
}

/// Two slots do not lose accuracy against one.
pub fn multislot(channels: usize, samples: usize) -> Check {
    timed(9, "multi-slot-accuracy", || {
        let run = |slots: usize| -> taskcomm::Result<(f64, f64)> {
            let sc = desk_scenario(slots, 4, 6.0);
            let gm = make_gm_model(&sc.config, 1, 3)?;
            let s = evaluate_accuracy(&Precoding::bca(), &gm, &sc, &MonteCarlo::new(channels, samples), 9)?;
            Ok((s.mean, s.stderr))
        };
        match (run(1), run(2)) {
            (Ok((m1, s1)), Ok((m2, s2))) => {
                let se = (s1 * s1 + s2 * s2).sqrt();
                (
                    m2 >= m1 - 2.0 * se,
                    format!("O=1 {m1:.4} ± {s1:.4}, O=2 {m2:.4} ± {s2:.4}; difference {:+.4} (floor −2 SE = {:.4})", m2 - m1, -2.0 * se),
                )
            }
            (Err(e), _) | (_, Err(e)) => failed(e),
        }
    })
}

/// Accuracy before and after fine-tuning for one seeded desk instance,
/// measured on the training channels with fresh features and noise shared by
/// both networks.
fn finetune_run(seed: u64) -> taskcomm::Result<(f64, f64)> {
    const CHANNELS: usize = 10;
    let sc = desk_scenario(1, 2, 0.0);
    let gm = make_gm_model(&sc.config, 1, derive_seed(seed, 1))?;
    let channels = (0..CHANNELS).map(|i| sc.channel(derive_seed(derive_seed(seed, 2), i as u64))).collect::<taskcomm::Result<Vec<_>>>()?;
    let set = TrainingSet::new(&sc.config, &gm, &channels, &[sc.sigma()], sc.config.eps2_precoding)?;
    let problems = set.problems()?;
    let net = anchored_net(Variant::DuBcaMm, &problems, &set.inits, 2, 2)?;
    let pretrain = SpsaConfig { steps: 100, ..SpsaConfig::default() };
    let net = train_unfolded(&net, &set, &pretrain, derive_seed(seed, 3))?.net;
    let features = sample_features(&gm, 1000, false, derive_seed(seed, 4))?;
    let tune = SpsaConfig { steps: 200, ..SpsaConfig::default() };
    let tuned = e2e_finetune(&net, &set, &features, &tune, derive_seed(seed, 5))?.net;
    let mc = MonteCarlo::new(1, 2000);
    let accuracy = |n: &UnfoldedNet| -> taskcomm::Result<f64> {
        let precoders = forward_all(n, &problems, &set.inits)?;
        let mut total = 0.0;
        for (i, (v, ch)) in precoders.iter().zip(&set.states).enumerate() {
            total += channel_accuracy(v, ch, &gm, &mc, derive_seed(seed, 100 + i as u64), derive_seed(seed, 200 + i as u64))?;
        }
        Ok(total / CHANNELS as f64)
    };
    Ok((accuracy(&net)?, accuracy(&tuned)?))
}

/// Fine-tuning never costs more than half a point and usually helps.
pub fn finetune_gain(runs: usize) -> Check {
    timed(10, "e2e-finetune", || {
        let results: taskcomm::Result<Vec<(f64, f64)>> = (0..runs as u64).into_par_iter().map(finetune_run).collect();
        match results {
            Ok(r) => {
                let improved = r.iter().filter(|(pre, post)| post > pre).count();
                let worst = r.iter().map(|(pre, post)| post - pre).fold(f64::INFINITY, f64::min);
                let mean = r.iter().map(|(pre, post)| post - pre).sum::<f64>() / r.len() as f64;
                let needed = (80 * runs).div_ceil(100);
                (
                    improved >= needed && worst >= -0.005,
                    format!("improved in {improved}/{runs} runs (need {needed}); worst change {worst:+.4} (floor −0.005), mean {mean:+.4}"),
                )
            }
            Err(e) => failed(e),
        }
    })
}

fn scalar(x: f64) -> CMatrix {
    CMatrix::from_element(1, 1, real(x))
}

/// Closed-form scalar cases evaluated by hand.
pub fn hand_examples() -> Check {
    timed(11, "closed-form-examples", || {
        let run = || -> taskcomm::Result<[(&'static str, f64, f64); 5]> {
            // N_r = D = K = 1, H = Σ = V = 1, ε² = 1 and σ → 0: U = 1/(1 + 1) = 1/2
            let cfg = SystemConfig::uniform(1, 1, 1, 1, 1, 1, 1.0).with_eps2_precoding(1.0);
            let gm = GmModel::new(vec![1.0], vec![HermitianPsd::new(scalar(1.0))?])?;
            let ch = ChannelState::new(vec![scalar(1.0)], 1e-300)?;
            let p = PrecodingProblem::new(&cfg, &gm, &ch)?;
            let u = p.u_step(&PrecoderSet { blocks: vec![scalar(1.0)] })?[(0, 0)];

            // min −4v + v² on v² ≤ 1: the unconstrained optimum 2 is cut back to 1 with λ = 1
            let step = v_step_bisection(&scalar(2.0), &scalar(1.0), 1.0)?;
            let mm = mm_v_step(&scalar(2.0), &scalar(1.0), 1.0, &scalar(0.0), 1)[(0, 0)];

            // classes with variance 2 and 0 at equal priors: ln(1 + 1) − ½ ln(1 + 2) − ½ ln 1
            let two_class = GmModel::new(vec![0.5, 0.5], vec![HermitianPsd::new(scalar(2.0))?, HermitianPsd::new(scalar(0.0))?])?;
            let rate = channel_mcr2(&PrecoderSet { blocks: vec![scalar(1.0)] }, &ch, &two_class, 1.0)?;
            Ok([
                ("U", (u - real(0.5)).norm(), u.re),
                ("v", (step.v[(0, 0)] - real(1.0)).norm(), step.v[(0, 0)].re),
                ("lambda", (step.lambda - 1.0).abs(), step.lambda),
                ("mm v", (mm - real(1.0)).norm(), mm.re),
                ("rate", (rate - (2f64.ln() - 0.5 * 3f64.ln())).abs(), rate),
            ])
        };
        match run() {
            Ok(rows) => {
                let worst = rows.iter().map(|r| r.1).fold(0.0, f64::max);
                let values: Vec<String> = rows.iter().map(|(n, _, v)| format!("{n}={v}")).collect();
                (worst <= 1e-12, format!("{}; worst error {worst:.1e} (limit 1e-12)", values.join(", ")))
            }
            Err(e) => failed(e),
        }
    })
}

/// Configuration used by the determinism check: small, but it exercises
/// feature pretraining, unfolded pretraining, fine-tuning and a sweep.
pub const DETERMINISM_CONFIG: &str = r#"
[run]
seed = 11

[features]
samples = 90
steps = 5

[unfolded]
layers = 2
train_channels = 4
steps = 12

[finetune]
steps = 6
samples = 40
channels = 2

[evaluation]
channels = 6
samples_per_channel = 40

[sweep]
snr_db = [0.0, 12.0]
solvers = ["bca", "bca-mm", "du-bca", "du-bca-mm", "identity"]
"#;

static SCRATCH: AtomicUsize = AtomicUsize::new(0);

fn scratch_dir() -> PathBuf {
    let n = SCRATCH.fetch_add(1, Ordering::Relaxed);
    std::env::temp_dir().join(format!("taskcomm-check-{}-{n}", std::process::id()))
}

/// Runs `command` twice into separate directories (the second time with
/// `extra` arguments appended) and compares the outputs byte for byte.
fn repeat_and_compare(run: Runner, command: &str, config: &Path, extra: &[&str]) -> anyhow::Result<Vec<String>> {
    let dirs = [scratch_dir(), scratch_dir()];
    let mut differing = Vec::new();
    for (i, dir) in dirs.iter().enumerate() {
        let mut args =
            vec![command.to_string(), "--config".into(), config.display().to_string(), "--out".into(), dir.display().to_string()];
        if i == 1 {
            args.extend(extra.iter().map(|s| s.to_string()));
        }
        run(&args)?;
    }
    for name in ["results.csv", "manifest.json"] {
        let a = std::fs::read(dirs[0].join(name))?;
        let b = std::fs::read(dirs[1].join(name))?;
        if a != b || a.is_empty() {
            differing.push(format!("{command}/{name}"));
        }
    }
    for dir in &dirs {
        std::fs::remove_dir_all(dir).ok();
    }
    Ok(differing)
}

/// Repeated CLI runs produce byte-identical CSV and manifests. `extra` is
/// appended to the second invocation (e.g. a different thread count).
pub fn determinism(run: Runner, extra: &[&str]) -> Check {
    timed(12, "determinism", || {
        let body = || -> anyhow::Result<Vec<String>> {
            let dir = scratch_dir();
            std::fs::create_dir_all(&dir)?;
            let config = dir.join("config.toml");
            std::fs::write(&config, DETERMINISM_CONFIG)?;
            let mut differing = repeat_and_compare(run, "sweep", &config, extra)?;
            differing.extend(repeat_and_compare(run, "run", &config, extra)?);
            std::fs::remove_dir_all(&dir).ok();
            Ok(differing)
        };
        match body() {
            Ok(d) if d.is_empty() => (true, "sweep and run outputs byte-identical across repeated runs".into()),
            Ok(d) => (false, format!("outputs differ: {}", d.join(", "))),
            Err(e) => failed(e),
        }
    })
}

/// Every check in order.
pub fn all(scale: &Scale, run: Runner, extra: &[&str]) -> Vec<Check> {
    let mut out = Vec::with_capacity(12);
    let mut push = |c: Check| {
        println!("{c}");
        out.push(c);
    };
    push(bca_monotonicity(scale.monotone_instances));
    push(v_step_kkt(scale.kkt_instances, scale.kkt_points));
    push(majorizer(scale.majorizer_triples));
    push(solver_equivalence(scale.equivalence_instances));
    push(anchored_equivalence(scale.anchored_instances));
    push(gradient_check(scale.gradient_instances));
    push(training_gain(scale.training_steps));
    push(accuracy_gain(scale.accuracy_channels, scale.accuracy_samples));
    push(multislot(scale.slot_channels, scale.slot_samples));
    push(finetune_gain(scale.finetune_runs));
    push(hand_examples());
    push(determinism(run, extra));
    out
}
