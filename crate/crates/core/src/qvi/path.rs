//! Warm-started penalty continuation over a decreasing `ρ` schedule.

use super::penalty::{solve_penalized, EpsRule};
use super::{finish, step_record, IterRecord, QviSolution, Route};
use crate::error::{check_len, Error, Result};
use crate::mesh::DiscreteOperator;
use crate::obstacle::ObstacleMap;
use crate::vector::{norm2, DualVector, StateVector};

/// `ρ_k = 10^{−k}`, `k = 1..6`.
pub fn default_schedule() -> Vec<f64> {
    (1..=6).map(|k| 10f64.powi(-k)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEntry {
    pub rho: f64,
    pub epsilon: f64,
    pub y: StateVector,
    pub newton_iterations: usize,
    pub residual: f64,
    /// `‖(y_ρ − Φ(y_ρ))⁺‖₂`.
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathFailure {
    pub rho: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathReport {
    pub entries: Vec<PathEntry>,
    /// First `ρ` at which Newton failed; the path stops there.
    pub failure: Option<PathFailure>,
}

impl PathReport {
    /// Entry whose `ρ` matches to relative `1e-12`.
    pub fn at(&self, rho: f64) -> Option<&PathEntry> {
        self.entries
            .iter()
            .find(|e| (e.rho - rho).abs() <= 1e-12 * rho.abs())
    }

    pub fn violations(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.violation).collect()
    }
}

pub(crate) fn validate_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::InvalidInput("rho schedule is empty".into()));
    }
    if schedule.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidInput("rho schedule entries must be positive".into()));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("rho schedule must be strictly decreasing".into()));
    }
    Ok(())
}

/// Solve the penalized equation along `schedule`, each solve warm-started
/// from the previous one, and audit the last iterate as a QVI solution.
pub fn penalty_path(
    a: &DiscreteOperator,
    f: &DualVector,
    map: &ObstacleMap,
    schedule: &[f64],
    eps_rule: EpsRule,
    tol: f64,
) -> Result<(QviSolution, PathReport)> {
    check_len(a.node_count(), f.len())?;
    validate_schedule(schedule)?;
    let mut report = PathReport::default();
    let mut history: Vec<IterRecord> = Vec::new();
    let mut current: Option<StateVector> = None;
    let mut prev_step = None;
    for (k, &rho) in schedule.iter().enumerate() {
        let pf = eps_rule.penalty(rho)?;
        match solve_penalized(a, f, map, rho, &pf, tol, current.as_ref()) {
            Ok((y, rep)) => {
                let phi = map.eval(&y)?;
                let pos: Vec<f64> = y.iter().zip(phi.iter()).map(|(v, p)| (v - p).max(0.0)).collect();
                let violation = norm2(&pos);
                let prev = current.clone().unwrap_or_else(|| y.clone());
                let rec = step_record(k + 1, &prev, &y, prev_step, violation);
                prev_step = Some(rec.step);
                history.push(rec);
                report.entries.push(PathEntry {
                    rho,
                    epsilon: pf.epsilon,
                    y: y.clone(),
                    newton_iterations: rep.iterations,
                    residual: rep.residual,
                    violation,
                });
                current = Some(y);
            }
            Err(e) => {
                if current.is_none() {
                    return Err(e);
                }
                report.failure = Some(PathFailure {
                    rho,
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    let y = current.expect("at least one successful solve");
    let sol = finish(a, f, map, y, Route::Penalty, history)?;
    Ok((sol, report))
}

/// Constant `C` in `‖y_ρ‖ ≤ C (‖f‖ + ‖v₀‖)` for any `v₀ ≤ Φ(v)`, from the
/// coercivity and boundedness constants.
pub fn penalty_uniform_bound_constant(c_a: f64, c_b: f64) -> f64 {
    let first = (3.0 * c_b * c_b / (4.0 * c_a) + 0.5).sqrt();
    let second = (3.0 / (4.0 * c_a) + 0.5).sqrt();
    (3.0 / c_a).sqrt() * first.max(second)
}
