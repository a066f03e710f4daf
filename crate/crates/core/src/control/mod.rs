//! Optimal control `min ½‖y − y_d‖²_H + (ν/2)‖u‖²_H` over a box, subject
//! to the QVI state constraint, via penalized adjoints and projected
//! gradients; plus audits of the resulting stationarity system.

mod adjoint;
mod checks;
mod solver;
mod stationarity;

pub use adjoint::solve_adjoint_penalized;
pub use checks::{lq_oracle, reduced_gradient_check, GradientProbe};
pub use solver::{
    oc_multistart, oc_path, reduced_objective_and_gradient, solve_oc_penalized, OcPathRecord,
    OcPathReport, OcPenalizedResult, PgRecord,
};
pub use stationarity::{
    check_b_stationarity, check_stationarity, smooth_weight_criterion, NamedResidual,
    StationarityClass, StationarityOptions, StationarityReport,
};

use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::mesh::DiscreteOperator;
use crate::obstacle::ObstacleMap;
use crate::qvi::QviSolution;
use crate::vector::{dot, DualVector, StateVector};

#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub a: Arc<DiscreteOperator>,
    pub map: ObstacleMap,
    pub y_d: StateVector,
    pub nu: f64,
    /// Lower control bound; entries may be `-∞`.
    pub u_a: StateVector,
    /// Upper control bound; entries may be `+∞`.
    pub u_b: StateVector,
}

impl ControlProblem {
    pub fn new(
        a: Arc<DiscreteOperator>,
        map: ObstacleMap,
        y_d: StateVector,
        nu: f64,
        u_a: StateVector,
        u_b: StateVector,
    ) -> Result<Self> {
        let n = a.node_count();
        check_len(n, map.node_count())?;
        check_len(n, y_d.len())?;
        check_len(n, u_a.len())?;
        check_len(n, u_b.len())?;
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidInput(format!("nu must be positive, got {nu}")));
        }
        if let Some(i) = (0..n).find(|&i| !(u_a[i] <= u_b[i]) || u_a[i] == f64::INFINITY || u_b[i] == f64::NEG_INFINITY) {
            return Err(Error::InvalidInput(format!(
                "control bounds must satisfy u_a ≤ u_b; node {i} has [{}, {}]",
                u_a[i], u_b[i]
            )));
        }
        Ok(Self {
            a,
            map,
            y_d,
            nu,
            u_a,
            u_b,
        })
    }

    pub fn node_count(&self) -> usize {
        self.a.node_count()
    }

    /// Weight of the discrete H inner product.
    pub fn weight(&self) -> f64 {
        self.a.grid.cell_volume()
    }

    /// `(v, w)_H`.
    pub fn inner(&self, v: &[f64], w: &[f64]) -> f64 {
        self.weight() * dot(v, w)
    }

    pub fn project(&self, u: &[f64]) -> StateVector {
        project_box(u, &self.u_a, &self.u_b)
    }
}

/// `J(y, u) = ½‖y − y_d‖²_H + (ν/2)‖u‖²_H`.
pub fn objective(problem: &ControlProblem, y: &[f64], u: &[f64]) -> Result<f64> {
    let n = problem.node_count();
    check_len(n, y.len())?;
    check_len(n, u.len())?;
    let misfit: f64 = y
        .iter()
        .zip(problem.y_d.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let w = problem.weight();
    Ok(0.5 * w * misfit + 0.5 * problem.nu * w * dot(u, u))
}

/// Nodewise clamp to `[u_a, u_b]`.
pub fn project_box(u: &[f64], u_a: &[f64], u_b: &[f64]) -> StateVector {
    StateVector::new(
        u.iter()
            .zip(u_a)
            .zip(u_b)
            .map(|((v, a), b)| v.max(*a).min(*b))
            .collect(),
    )
}

/// Nodes where the control sits on a bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSets {
    pub at_lower: Vec<usize>,
    pub at_upper: Vec<usize>,
    pub tol: f64,
}

impl ControlSets {
    pub fn classify(u: &[f64], u_a: &[f64], u_b: &[f64], tol: f64) -> Self {
        let mut s = Self {
            at_lower: Vec::new(),
            at_upper: Vec::new(),
            tol,
        };
        for i in 0..u.len() {
            if u_a[i].is_finite() && u[i] - u_a[i] <= tol {
                s.at_lower.push(i);
            } else if u_b[i].is_finite() && u_b[i] - u[i] <= tol {
                s.at_upper.push(i);
            }
        }
        s
    }
}

/// Candidate optimum with multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityBundle {
    pub y: StateVector,
    pub u: StateVector,
    pub p: StateVector,
    /// `(I − Φ'(y))⁻ᵀ μ`.
    pub lambda: DualVector,
    /// `(1/ρ) m_ρ'(y − Φ(y)) p` from the last penalized solve.
    pub lambda_path: DualVector,
    /// `‖λ − λ_path‖₂`.
    pub lambda_gap: f64,
    /// `u − Ay`.
    pub xi: DualVector,
    /// `y_d − y − Aᵀp`.
    pub mu: DualVector,
    pub control_sets: ControlSets,
    /// The state audited as a QVI solution with load `u`.
    pub state: QviSolution,
    /// `ρ` of the penalized problem the bundle came from (0 if none).
    pub rho: f64,
}

/// Assemble multipliers for a given `(y, u, p)`; `lambda_path` is taken as
/// given.
pub fn assemble_bundle(
    problem: &ControlProblem,
    y: StateVector,
    u: StateVector,
    p: StateVector,
    lambda_path: DualVector,
    rho: f64,
) -> Result<StationarityBundle> {
    let n = problem.node_count();
    let a = &problem.a;
    let ay = a.apply(&y)?;
    let xi = DualVector::new(u.iter().zip(ay.iter()).map(|(s, t)| s - t).collect());
    let atp = a.apply_transpose(&p)?;
    let mu = DualVector::new(
        (0..n)
            .map(|i| problem.y_d[i] - y[i] - atp[i])
            .collect(),
    );
    let lambda = recover_lambda(problem, &y, &mu)?;
    let lambda_gap = lambda.dist(&lambda_path)?;
    let control_sets = ControlSets::classify(&u, &problem.u_a, &problem.u_b, 1e-10 * (1.0 + u.norm_inf()));
    let f = u.to_dual();
    let d = crate::qvi::complementarity_decompose(a, &f, &problem.map, &y)?;
    let state = QviSolution {
        y: y.clone(),
        xi: d.xi,
        obstacle: d.obstacle,
        sets: d.sets,
        residuals: d.residuals,
        route: crate::qvi::Route::Penalty,
        history: Vec::new(),
    };
    Ok(StationarityBundle {
        y,
        u,
        p,
        lambda,
        lambda_path,
        lambda_gap,
        xi,
        mu,
        control_sets,
        state,
        rho,
    })
}

/// Solve `(I − Φ'(y))ᵀ λ = μ`.
fn recover_lambda(problem: &ControlProblem, y: &[f64], mu: &[f64]) -> Result<DualVector> {
    match &problem.map {
        ObstacleMap::Constant(_) => Ok(DualVector::new(mu.to_vec())),
        ObstacleMap::AffineScaling { scale, .. } => {
            if (1.0 - scale).abs() < crate::linsolve::PIVOT_TOL {
                return Err(crate::linsolve::LinsolveError::Singular { pivot: 1.0 - scale, column: 0 }.into());
            }
            Ok(DualVector::new(mu.iter().map(|m| m / (1.0 - scale)).collect()))
        }
        map => {
            let n = y.len();
            let j = map.jacobian_dense(y)?;
            let m = nalgebra::DMatrix::identity(n, n) - j.transpose();
            let x = crate::linsolve::solve_dense(&m, mu)?;
            Ok(DualVector::new(x))
        }
    }
}
