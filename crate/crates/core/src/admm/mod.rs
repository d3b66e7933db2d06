//! Consensus ADMM for the margin-ratio metric learning problem
//!
//! ```text
//! minimize    c * d + sum_k xi_k
//! subject to  rho_M(cross pair k) >= 2 - xi_k,  xi_k >= 0
//!             rho_M(diameter pair l) <= d
//!             M PSD
//! ```
//!
//! Each iteration updates, in order, `p`, `q`, `m1`, `m2`, `m` and the
//! multipliers (see [`updates`]).

pub mod pairs;
pub mod updates;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::Result;
use crate::json::ext_float;
use crate::metric::MetricMatrix;

pub use pairs::{assemble_pairs, PairBlock, PairSystem, Variant};
pub use updates::{
    hinge_prox, max_prox_threshold, update_duals, update_m, update_m1, update_m2, update_p, update_q, AdmmState, NormalSolver,
    SolverConfig,
};

/// Consecutive iterations both residuals must stay under tolerance.
pub const CONVERGENCE_STREAK: usize = 3;

/// Objective breakdown at one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub value: f64,
    /// Largest diameter-pair distance, clamped at 0.
    pub diameter: f64,
    /// `sum_k max(0, 2 - rho(cross pair k))`.
    pub slack_sum: f64,
}

/// `c * max(A2 m) + sum max(0, 2 - A1 m)` evaluated through the pair system.
pub fn objective(pairs: &PairSystem, m: &[f64], c: f64) -> Objective {
    let diameter = pairs.a2.mul(m).into_iter().fold(0.0f64, f64::max);
    let slack_sum = pairs.a1.mul(m).into_iter().map(|v| (2.0 - v).max(0.0)).sum::<f64>();
    Objective {
        value: c * diameter + slack_sum,
        diameter,
        slack_sum,
    }
}

/// Outcome of a solve. `metric` is the last iterate; the best iterate seen is
/// kept separately for runs that stop at `max_iter`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub config: SolverConfig,
    pub n1: usize,
    pub n2: usize,
    pub imbalance_ratio: f64,
    pub converged: bool,
    pub iterations_used: usize,
    pub metric: MetricMatrix,
    pub d_final: f64,
    pub slack_sum_final: f64,
    pub objective_final: f64,
    pub best_metric: MetricMatrix,
    pub best_objective: f64,
    pub best_iteration: usize,
    #[serde(with = "ext_float")]
    pub primal_residual_final: f64,
    #[serde(with = "ext_float")]
    pub dual_residual_final: f64,
    pub warning: Option<String>,
    pub objective_trace: Vec<f64>,
    pub primal_residual_trace: Vec<f64>,
    pub dual_residual_trace: Vec<f64>,
}

impl SolveReport {
    /// The final iterate when converged, otherwise the best iterate.
    pub fn chosen_metric(&self) -> &MetricMatrix {
        if self.converged {
            &self.metric
        } else {
            &self.best_metric
        }
    }
}

/// Assembles the pair system for `config.variant` and solves.
pub fn solve(data: &LabeledDataset, config: &SolverConfig) -> Result<SolveReport> {
    let pairs = assemble_pairs(data, config.variant)?;
    solve_pairs(&pairs, config)
}

pub fn solve_pairs(pairs: &PairSystem, config: &SolverConfig) -> Result<SolveReport> {
    solve_pairs_observed(pairs, config, |_| {})
}

/// As [`solve_pairs`], calling `observe` with the state after every iteration.
pub fn solve_pairs_observed(pairs: &PairSystem, config: &SolverConfig, mut observe: impl FnMut(&AdmmState)) -> Result<SolveReport> {
    config.validate()?;
    let solver1 = NormalSolver::new(&pairs.a1)?;
    let solver2 = NormalSolver::new(&pairs.a2)?;
    let mut state = AdmmState::initial(pairs);

    let mut objective_trace = Vec::new();
    let mut primal_trace = Vec::new();
    let mut dual_trace = Vec::new();
    let mut best = (f64::INFINITY, 0usize, state.m.clone());
    let mut streak = 0;
    let mut converged = false;

    for it in 1..=config.max_iter {
        update_p(&mut state, config);
        update_q(&mut state, config)?;
        update_m1(&mut state, pairs, config, &solver1);
        update_m2(&mut state, pairs, config, &solver2);
        let previous = state.m.clone();
        update_m(&mut state, pairs, config)?;
        update_duals(&mut state, config);
        state.dual_residual = config.mu * state.m.iter().zip(&previous).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        state.iter = it;

        let obj = objective(pairs, &state.m, config.c).value;
        objective_trace.push(obj);
        primal_trace.push(state.primal_residual);
        dual_trace.push(state.dual_residual);
        if obj < best.0 {
            best = (obj, it, state.m.clone());
        }
        observe(&state);

        if state.primal_residual < config.tol_primal && state.dual_residual < config.tol_dual {
            streak += 1;
        } else {
            streak = 0;
        }
        if streak >= CONVERGENCE_STREAK {
            converged = true;
            break;
        }
    }

    let fin = objective(pairs, &state.m, config.c);
    let warning = (!converged).then(|| {
        format!(
            "not converged after {} iterations (primal {:e}, dual {:e})",
            state.iter, state.primal_residual, state.dual_residual
        )
    });
    Ok(SolveReport {
        config: *config,
        n1: pairs.n1(),
        n2: pairs.n2(),
        imbalance_ratio: pairs.imbalance_ratio,
        converged,
        iterations_used: state.iter,
        metric: MetricMatrix::from_projection(pairs.p, state.m.clone()),
        d_final: fin.diameter,
        slack_sum_final: fin.slack_sum,
        objective_final: fin.value,
        best_metric: MetricMatrix::from_projection(pairs.p, best.2),
        best_objective: best.0,
        best_iteration: best.1,
        primal_residual_final: state.primal_residual,
        dual_residual_final: state.dual_residual,
        warning,
        objective_trace,
        primal_residual_trace: primal_trace,
        dual_residual_trace: dual_trace,
    })
}
