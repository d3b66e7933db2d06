//! The individual ADMM block updates.
//!
//! Variables (all vectors are row-major vectorizations of `p x p` matrices
//! where they have length `p^2`):
//!
//! * `p_vec` (one per cross pair): hinge slacks, constrained `p = 2 - A1 m1`;
//! * `q_vec` (one per diameter pair): constrained `q = A2 m2`, whose max is
//!   the diameter estimate;
//! * `m1`, `m2`: copies of the metric tied to `m` by `m1 = m`, `m2 = m`;
//! * `m`: the consensus metric, kept in the PSD cone;
//! * `alpha1..alpha4`: scaled-form multipliers of the four constraints.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::pairs::{PairBlock, PairSystem, Variant};
use crate::error::{Error, Result};
use crate::linalg;

/// Solver parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Weight of the diameter term against the summed hinge slacks.
    pub c: f64,
    /// Augmented-Lagrangian penalty.
    pub mu: f64,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    /// Absolute width at which the threshold bisection in [`update_q`] stops.
    pub bisect_tol: f64,
    pub variant: Variant,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            mu: 1.0,
            max_iter: 5000,
            tol_primal: 1e-4,
            tol_dual: 1e-4,
            bisect_tol: 1e-13,
            variant: Variant::LipD,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c", self.c),
            ("mu", self.mu),
            ("tol_primal", self.tol_primal),
            ("tol_dual", self.tol_dual),
            ("bisect_tol", self.bisect_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and positive, got {v}")));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be positive".into()));
        }
        if self.tol_primal > 1e-2 || self.tol_dual > 1e-2 {
            return Err(Error::InvalidParameter("tolerances must not exceed 1e-2".into()));
        }
        Ok(())
    }
}

/// Iterate of the consensus ADMM.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub m: Vec<f64>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub p_vec: Vec<f64>,
    pub q_vec: Vec<f64>,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub alpha3: Vec<f64>,
    pub alpha4: Vec<f64>,
    pub iter: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// `A1 m1` and `A2 m2` for the current `m1`, `m2`.
    pub a1m1: Vec<f64>,
    pub a2m2: Vec<f64>,
}

impl AdmmState {
    /// `M = I`, `m1 = m2 = vec(I)`, `p = 2 - A1 m1`, `q = A2 m2`, multipliers 0.
    pub fn initial(pairs: &PairSystem) -> Self {
        let dim = pairs.dim();
        let mut m = vec![0.0; dim];
        for i in 0..pairs.p {
            m[i * pairs.p + i] = 1.0;
        }
        let a1m1 = pairs.a1.mul(&m);
        let a2m2 = pairs.a2.mul(&m);
        Self {
            p_vec: a1m1.iter().map(|v| 2.0 - v).collect(),
            q_vec: a2m2.clone(),
            m1: m.clone(),
            m2: m.clone(),
            m,
            alpha1: vec![0.0; dim],
            alpha2: vec![0.0; dim],
            alpha3: vec![0.0; pairs.n1()],
            alpha4: vec![0.0; pairs.n2()],
            iter: 0,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
            a1m1,
            a2m2,
        }
    }
}

/// Proximal map of `x -> lambda * max(0, x)`: `omega - lambda` above
/// `lambda`, 0 on `[0, lambda]`, `omega` below 0.
pub fn hinge_prox(omega: f64, lambda: f64) -> f64 {
    if omega > lambda {
        omega - lambda
    } else if omega >= 0.0 {
        0.0
    } else {
        omega
    }
}

/// Threshold `t` with `sum_k max(0, v_k - t) = budget` (`budget > 0`).
///
/// Only entries above `max(v) - budget` can exceed the root, so the
/// bisection runs over that subset on the bracket `[max(v) - budget, max(v)]`.
/// The result is then refined with the closed form on the active set.
pub fn max_prox_threshold(v: &[f64], budget: f64, tol: f64) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::InvalidParameter("threshold of an empty vector".into()));
    }
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !vmax.is_finite() || v.iter().any(|x| x.is_nan()) {
        return Err(Error::BisectionBracketFailure { lo: f64::NAN, hi: vmax });
    }
    // Pad the lower end so rounding in `excess` cannot put the root outside.
    let mut lo = vmax - budget - 4.0 * f64::EPSILON * (vmax.abs() + budget);
    let mut hi = vmax;
    let cand: Vec<f64> = v.iter().copied().filter(|&x| x > lo).collect();
    let excess = |t: f64| cand.iter().map(|&x| (x - t).max(0.0)).sum::<f64>();
    if excess(lo) < budget {
        return Err(Error::BisectionBracketFailure { lo, hi });
    }
    while hi - lo > tol * (1.0 + hi.abs()) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) >= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    let (sum, count) = cand.iter().filter(|&&x| x > mid).fold((0.0, 0usize), |(s, c), &x| (s + x, c + 1));
    if count > 0 {
        let exact = (sum - budget) / count as f64;
        if exact >= lo && exact <= hi {
            return Ok(exact);
        }
    }
    Ok(mid)
}

/// `p = prox_{(1/mu) max(0, .)}(2 - A1 m1 - alpha3 / mu)`, componentwise.
pub fn update_p(state: &mut AdmmState, config: &SolverConfig) {
    let lambda = 1.0 / config.mu;
    for ((p, a1m1), a3) in state.p_vec.iter_mut().zip(&state.a1m1).zip(&state.alpha3) {
        *p = hinge_prox(2.0 - a1m1 - a3 / config.mu, lambda);
    }
}

/// `q = prox_{(c/mu) max}(A2 m2 - alpha4 / mu) = min(t*, v)`.
pub fn update_q(state: &mut AdmmState, config: &SolverConfig) -> Result<()> {
    let v: Vec<f64> = state.a2m2.iter().zip(&state.alpha4).map(|(a, b)| a - b / config.mu).collect();
    let t = max_prox_threshold(&v, config.c / config.mu, config.bisect_tol)?;
    for (q, vk) in state.q_vec.iter_mut().zip(&v) {
        *q = vk.min(t);
    }
    Ok(())
}

/// Cached Cholesky factor of `A^T A + I`.
pub struct NormalSolver {
    chol: Cholesky<f64, Dyn>,
}

impl NormalSolver {
    pub fn new(block: &PairBlock) -> Result<Self> {
        let g: DMatrix<f64> = block.normal_matrix();
        let chol = Cholesky::new(g).ok_or(Error::FactorizationFailure)?;
        Ok(Self { chol })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let x = self.chol.solve(&DVector::from_column_slice(rhs));
        x.iter().copied().collect()
    }
}

/// Solves `mu (A1^T A1 + I) m1 = mu m - alpha1 - A1^T alpha3 - mu A1^T p + 2 mu A1^T 1`.
pub fn update_m1(state: &mut AdmmState, pairs: &PairSystem, config: &SolverConfig, solver: &NormalSolver) {
    let mu = config.mu;
    // A1^T (alpha3 + mu p - 2 mu) in one pass.
    let y: Vec<f64> = state.alpha3.iter().zip(&state.p_vec).map(|(a3, p)| a3 + mu * p - 2.0 * mu).collect();
    let aty = pairs.a1.t_mul(&y);
    let rhs: Vec<f64> = (0..pairs.dim()).map(|a| state.m[a] - (state.alpha1[a] + aty[a]) / mu).collect();
    state.m1 = solver.solve(&rhs);
    state.a1m1 = pairs.a1.mul(&state.m1);
}

/// Solves `mu (A2^T A2 + I) m2 = mu m - alpha2 + A2^T alpha4 + mu A2^T q`.
pub fn update_m2(state: &mut AdmmState, pairs: &PairSystem, config: &SolverConfig, solver: &NormalSolver) {
    let mu = config.mu;
    let y: Vec<f64> = state.alpha4.iter().zip(&state.q_vec).map(|(a4, q)| a4 + mu * q).collect();
    let aty = pairs.a2.t_mul(&y);
    let rhs: Vec<f64> = (0..pairs.dim()).map(|a| state.m[a] + (aty[a] - state.alpha2[a]) / mu).collect();
    state.m2 = solver.solve(&rhs);
    state.a2m2 = pairs.a2.mul(&state.m2);
}

/// `m = psd_project((m1 + m2) / 2 + (alpha1 + alpha2) / (2 mu))`.
pub fn update_m(state: &mut AdmmState, pairs: &PairSystem, config: &SolverConfig) -> Result<()> {
    let avg: Vec<f64> = (0..pairs.dim())
        .map(|a| 0.5 * (state.m1[a] + state.m2[a]) + (state.alpha1[a] + state.alpha2[a]) / (2.0 * config.mu))
        .collect();
    state.m = linalg::psd_project(&avg, pairs.p)?;
    Ok(())
}

/// Multiplier ascent on the four constraints. Also records the primal residual
/// `max(|r3|_inf / sqrt(n1), |r4|_inf / sqrt(n2), |m1 - m|_inf, |m2 - m|_inf)`.
pub fn update_duals(state: &mut AdmmState, config: &SolverConfig) {
    let mu = config.mu;
    let mut r12 = 0.0f64;
    for a in 0..state.m.len() {
        let r1 = state.m1[a] - state.m[a];
        let r2 = state.m2[a] - state.m[a];
        state.alpha1[a] += mu * r1;
        state.alpha2[a] += mu * r2;
        r12 = r12.max(r1.abs()).max(r2.abs());
    }
    let mut r3 = 0.0f64;
    for ((a3, p), a1m1) in state.alpha3.iter_mut().zip(&state.p_vec).zip(&state.a1m1) {
        let r = p + a1m1 - 2.0;
        *a3 += mu * r;
        r3 = r3.max(r.abs());
    }
    let mut r4 = 0.0f64;
    for ((a4, q), a2m2) in state.alpha4.iter_mut().zip(&state.q_vec).zip(&state.a2m2) {
        let r = q - a2m2;
        *a4 += mu * r;
        r4 = r4.max(r.abs());
    }
    let n1 = state.alpha3.len().max(1) as f64;
    let n2 = state.alpha4.len().max(1) as f64;
    state.primal_residual = (r3 / n1.sqrt()).max(r4 / n2.sqrt()).max(r12);
}
