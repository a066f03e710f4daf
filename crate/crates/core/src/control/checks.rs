use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::solver::reduced_objective_and_gradient;
use super::ControlProblem;
use crate::error::{Error, Result};
use crate::qvi::PenaltyFunction;
use crate::vector::StateVector;

/// One central-difference probe of the reduced gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientProbe {
    /// `(νu − p, h)_H`.
    pub adjoint: f64,
    /// `(J(u + th) − J(u − th)) / 2t`.
    pub finite_difference: f64,
    pub relative_error: f64,
    pub step: f64,
}

/// Compare the adjoint gradient with central differences at `points`
/// random points `center + amplitude·U(−1, 1)` along random directions.
pub fn reduced_gradient_check(
    problem: &ControlProblem,
    rho: f64,
    pf: &PenaltyFunction,
    center: &StateVector,
    amplitude: f64,
    points: usize,
    seed: u64,
) -> Result<Vec<GradientProbe>> {
    let n = problem.node_count();
    crate::error::check_len(n, center.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(points);
    for _ in 0..points {
        let u = StateVector::new(
            center
                .iter()
                .map(|c| c + amplitude * rng.random_range(-1.0..1.0))
                .collect(),
        );
        let h = StateVector::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let (_, g) = reduced_objective_and_gradient(problem, rho, pf, &u)?;
        let adjoint = problem.inner(&g, &h);
        let t = 1e-6 * (1.0 + u.norm_inf());
        let (jp, _) = reduced_objective_and_gradient(problem, rho, pf, &u.add_scaled(t, &h)?)?;
        let (jm, _) = reduced_objective_and_gradient(problem, rho, pf, &u.add_scaled(-t, &h)?)?;
        let fd = (jp - jm) / (2.0 * t);
        let scale = adjoint.abs().max(fd.abs()).max(f64::MIN_POSITIVE);
        out.push(GradientProbe {
            adjoint,
            finite_difference: fd,
            relative_error: (fd - adjoint).abs() / scale,
            step: t,
        });
    }
    Ok(out)
}

/// Optimum of the problem with the obstacle and box dropped:
/// `(A⁻ᵀA⁻¹ + νI) u = A⁻ᵀ y_d`, `y = A⁻¹u`.
pub fn lq_oracle(problem: &ControlProblem) -> Result<(StateVector, StateVector)> {
    let n = problem.node_count();
    if n > crate::linsolve::DENSE_FALLBACK_LIMIT {
        return Err(Error::InvalidInput(format!("dense oracle limited to {} nodes", crate::linsolve::DENSE_FALLBACK_LIMIT)));
    }
    let a = problem.a.to_dense();
    let inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("operator matrix is singular".into()))?;
    let m: DMatrix<f64> = inv.transpose() * &inv + DMatrix::identity(n, n) * problem.nu;
    let rhs = inv.transpose() * DVector::from_column_slice(&problem.y_d);
    let u = crate::linsolve::solve_dense(&m, rhs.as_slice())?;
    let y = (&inv * DVector::from_column_slice(&u)).as_slice().to_vec();
    Ok((StateVector::new(u), StateVector::new(y)))
}
