//! Quasi-variational inequalities `y ≤ Φ(y), ξ = f − Ay ≥ 0,
//! ⟨ξ, Φ(y) − y⟩ = 0`, solved by fixed-point iteration, the monotone
//! interval method, or penalty path-following.

mod fixed_point;
mod path;
mod penalty;

pub use fixed_point::{check_increasing_sampled, solve_qvi_interval, solve_qvi_iteration};
pub use path::{
    default_schedule, penalty_path, penalty_uniform_bound_constant, PathEntry, PathFailure,
    PathReport,
};
pub(crate) use path::validate_schedule;
pub use penalty::{solve_penalized, EpsRule, PenaltyFunction, PenaltySolveReport};

use crate::error::{check_len, Result};
use crate::mesh::DiscreteOperator;
use crate::obstacle::ObstacleMap;
use crate::vector::{DualVector, StateVector};
use crate::vi::{residuals_from, ActiveSets, ResidualReport, Thresholds};

/// Monotonicity slack for the ordered iterations.
pub const MONOTONE_TOL: f64 = 1e-10;
/// Tolerance handed to the inner obstacle solver.
pub(crate) const INNER_VI_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Iteration,
    IntervalMin,
    IntervalMax,
    Penalty,
}

impl Route {
    pub fn name(self) -> &'static str {
        match self {
            Route::Iteration => "iteration",
            Route::IntervalMin => "interval_min",
            Route::IntervalMax => "interval_max",
            Route::Penalty => "penalty",
        }
    }
}

/// One step of a QVI iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iteration: usize,
    /// `‖y_n − y_{n−1}‖₂`.
    pub step: f64,
    /// `step_n / step_{n−1}` (NaN on the first step or after a zero step).
    pub ratio: f64,
    /// `max (y_n − y_{n−1})⁺`.
    pub max_increase: f64,
    /// `max (y_{n−1} − y_n)⁺`.
    pub max_decrease: f64,
    /// Largest complementarity residual of `y_n` as a QVI candidate.
    pub residual: f64,
}

/// A QVI solution with its multiplier, node classification and audit.
#[derive(Debug, Clone, PartialEq)]
pub struct QviSolution {
    pub y: StateVector,
    pub xi: DualVector,
    /// `Φ(y)`.
    pub obstacle: StateVector,
    pub sets: ActiveSets,
    pub residuals: ResidualReport,
    pub route: Route,
    pub history: Vec<IterRecord>,
}

impl QviSolution {
    /// Whether the complementarity residuals are within the solution's own
    /// thresholds.
    pub fn satisfies_invariants(&self) -> bool {
        let th = &self.sets.thresholds;
        self.residuals.feasibility <= th.tol_act
            && self.residuals.dual <= th.tol_comp
            && self.residuals.complementarity <= th.tol_comp
    }
}

/// `ξ = f − Ay`, node sets relative to `Φ(y)`, and residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub xi: DualVector,
    pub obstacle: StateVector,
    pub sets: ActiveSets,
    pub residuals: ResidualReport,
}

pub fn complementarity_decompose(
    a: &DiscreteOperator,
    f: &DualVector,
    map: &ObstacleMap,
    y: &StateVector,
) -> Result<Decomposition> {
    check_len(a.node_count(), f.len())?;
    check_len(a.node_count(), y.len())?;
    let obstacle = map.eval(y)?;
    let ay = a.apply(y)?;
    let xi = DualVector::new(f.iter().zip(ay.iter()).map(|(p, q)| p - q).collect());
    let gap: Vec<f64> = obstacle.iter().zip(y.iter()).map(|(p, v)| p - v).collect();
    let th = Thresholds::new(f, &obstacle);
    let sets = ActiveSets::classify(&gap, &xi, &th);
    let residuals = residuals_from(&xi, &obstacle, y);
    Ok(Decomposition {
        xi,
        obstacle,
        sets,
        residuals,
    })
}

pub(crate) fn finish(
    a: &DiscreteOperator,
    f: &DualVector,
    map: &ObstacleMap,
    y: StateVector,
    route: Route,
    history: Vec<IterRecord>,
) -> Result<QviSolution> {
    let d = complementarity_decompose(a, f, map, &y)?;
    Ok(QviSolution {
        y,
        xi: d.xi,
        obstacle: d.obstacle,
        sets: d.sets,
        residuals: d.residuals,
        route,
        history,
    })
}

pub(crate) fn step_record(
    iteration: usize,
    prev: &[f64],
    next: &[f64],
    prev_step: Option<f64>,
    residual: f64,
) -> IterRecord {
    let mut inc: f64 = 0.0;
    let mut dec: f64 = 0.0;
    let mut sq = 0.0;
    for (p, q) in prev.iter().zip(next) {
        let d = q - p;
        inc = inc.max(d);
        dec = dec.max(-d);
        sq += d * d;
    }
    let step = sq.sqrt();
    let ratio = match prev_step {
        Some(s) if s > 0.0 => step / s,
        _ => f64::NAN,
    };
    IterRecord {
        iteration,
        step,
        ratio,
        max_increase: inc,
        max_decrease: dec,
        residual,
    }
}
