//! Majorization-minimization V-step and the BCA-MM solver.
//!
//! The QCQP `−2 Re{bᴴ v} + vᴴ N v` is upper-bounded at `v̄` by replacing `N`
//! with `η I`, `η ≥ λ_max(N)`. Minimizing the bound over the power ball is a
//! scaled step followed by a radial projection, so no inverse or multiplier
//! search is needed.

use crate::bca::{solve_with_rule, BcaState, PrecodingProblem, VStepRule};
use crate::error::Result;
use crate::numerics::{max_abs_row_sum, norm_sqr, real_inner, CMatrix};

pub const DEFAULT_INNER_ITERS: usize = 20;

/// Curvature of the surrogate: the maximum absolute row sum of `N`.
pub fn eta_bound(n: &CMatrix) -> f64 {
    max_abs_row_sum(n)
}

/// Quadratic surrogate `u(v | v̄) = η‖v‖² − 2 Re{(b − (N − ηI)v̄)ᴴ v} + v̄ᴴ(ηI − N)v̄`.
pub fn surrogate(b: &CMatrix, n: &CMatrix, eta: f64, v: &CMatrix, anchor: &CMatrix) -> f64 {
    let n_anchor = n * anchor;
    let shifted = b - (&n_anchor - anchor.scale(eta));
    eta * norm_sqr(v) - 2.0 * real_inner(&shifted, v) + eta * norm_sqr(anchor) - real_inner(anchor, &n_anchor)
}

/// Scales `q` back onto the ball `‖v‖² ≤ power` when it lies outside.
pub fn ball_project(q: CMatrix, power: f64) -> CMatrix {
    let norm = norm_sqr(&q).sqrt();
    let radius = power.sqrt();
    if norm > radius {
        q.scale(radius / norm)
    } else {
        q
    }
}

/// One MM update with a general curvature matrix:
/// `q = (b − (N − ηΥ)v̄)/η` followed by the ball projection.
/// With `Υ = I` this is the exact surrogate minimizer.
pub fn mm_update(b: &CMatrix, n: &CMatrix, eta: f64, upsilon: Option<&CMatrix>, anchor: &CMatrix, power: f64) -> CMatrix {
    let mut q = (b - n * anchor).unscale(eta);
    match upsilon {
        Some(u) => q += u * anchor,
        None => q += anchor,
    }
    ball_project(q, power)
}

/// Minimizer when `N = 0`: the objective is linear, so the optimum sits on
/// the boundary along `b` (any point is optimal when `b = 0`).
pub fn linear_step(b: &CMatrix, power: f64, v_init: &CMatrix) -> CMatrix {
    let nb = norm_sqr(b).sqrt();
    if nb == 0.0 {
        v_init.clone()
    } else {
        b.scale(power.sqrt() / nb)
    }
}

/// Runs `inner_iters` MM updates from `v_init`.
pub fn mm_v_step(b: &CMatrix, n: &CMatrix, power: f64, v_init: &CMatrix, inner_iters: usize) -> CMatrix {
    let eta = eta_bound(n);
    if eta == 0.0 {
        return linear_step(b, power, v_init);
    }
    let mut v = v_init.clone();
    for _ in 0..inner_iters {
        v = mm_update(b, n, eta, None, &v, power);
    }
    v
}

/// BCA with the MM V-step, warm-started at each device's current precoder.
pub fn bca_mm_solve(
    problem: &PrecodingProblem,
    v_init: &crate::model::PrecoderSet,
    max_iters: usize,
    inner_iters: usize,
    tol: f64,
) -> Result<BcaState> {
    solve_with_rule(problem, v_init, VStepRule::Mm { inner_iters }, max_iters, tol)
}
