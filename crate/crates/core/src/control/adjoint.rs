use nalgebra::DMatrix;
use sprs::TriMat;

use super::ControlProblem;
use crate::error::{check_len, Result};
use crate::linsolve::{solve_auto, DenseLu};
use crate::mesh::{DiscreteOperator, OPERATOR_SOLVE_TOL};
use crate::obstacle::ObstacleMap;
use crate::qvi::PenaltyFunction;
use crate::vector::StateVector;

/// Solve `(Aᵀ + (1/ρ)(I − Φ'(y))ᵀ diag(m_ρ'(y − Φ(y)))) p = rhs`, with
/// `rhs = y_d − y` unless given.
///
/// Returns `p` and the slopes `m_ρ'(y − Φ(y))`.
pub fn solve_adjoint_penalized(
    problem: &ControlProblem,
    y: &[f64],
    rho: f64,
    pf: &PenaltyFunction,
    rhs: Option<&[f64]>,
) -> Result<(StateVector, Vec<f64>)> {
    adjoint(&problem.a, &problem.map, rho, pf, y, &problem.y_d, rhs)
}

pub(super) fn adjoint(
    a: &DiscreteOperator,
    map: &ObstacleMap,
    rho: f64,
    pf: &PenaltyFunction,
    y: &[f64],
    y_d: &[f64],
    rhs: Option<&[f64]>,
) -> Result<(StateVector, Vec<f64>)> {
    let n = a.node_count();
    check_len(n, y.len())?;
    let phi = map.eval(y)?;
    let slopes: Vec<f64> = (0..n).map(|i| pf.deriv(y[i] - phi[i])).collect();
    let rhs: Vec<f64> = match rhs {
        Some(r) => {
            check_len(n, r.len())?;
            r.to_vec()
        }
        None => {
            check_len(n, y_d.len())?;
            (0..n).map(|i| y_d[i] - y[i]).collect()
        }
    };
    let diagonal = match map {
        ObstacleMap::Constant(_) => Some(0.0),
        ObstacleMap::AffineScaling { scale, .. } => Some(*scale),
        _ => None,
    };
    let p = if let Some(s) = diagonal {
        let mut t = TriMat::new((n, n));
        for (v, (i, j)) in a.matrix.iter() {
            t.add_triplet(j, i, *v);
        }
        for (i, m) in slopes.iter().enumerate() {
            if *m != 0.0 {
                t.add_triplet(i, i, m * (1.0 - s) / rho);
            }
        }
        solve_auto(&t.to_csr(), &rhs, OPERATOR_SOLVE_TOL)?.0
    } else {
        let jphi = map.jacobian_dense(y)?;
        let mut jt: DMatrix<f64> = a.to_dense().transpose();
        // (I − Φ')ᵀ diag(m'): column i scaled by m'_i.
        for (i, m) in slopes.iter().enumerate() {
            if *m == 0.0 {
                continue;
            }
            let c = m / rho;
            for k in 0..n {
                let id = if i == k { 1.0 } else { 0.0 };
                jt[(k, i)] += c * (id - jphi[(i, k)]);
            }
        }
        DenseLu::new(jt)?.solve(&rhs)?
    };
    Ok((StateVector::new(p), slopes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{assemble_operator, build_grid, OperatorSpec};
    use crate::obstacle::CutoffMap;

    #[test]
    fn matches_dense_transpose_of_state_jacobian() {
        let a = assemble_operator(build_grid(1, 12).unwrap(), &OperatorSpec::laplacian()).unwrap();
        let n = 12;
        let centers = vec![StateVector::constant(n, 0.0), StateVector::constant(n, 1.0)];
        let targets = vec![StateVector::constant(n, 0.1), StateVector::constant(n, 0.9)];
        let map = ObstacleMap::Cutoff(CutoffMap::new(0.2, centers, targets, a.grid.cell_volume()).unwrap());
        let rho = 0.01;
        let pf = PenaltyFunction::new(rho).unwrap();
        let y: Vec<f64> = (0..n).map(|i| 0.1 + 0.01 * i as f64).collect();
        let y_d: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let (p, slopes) = adjoint(&a, &map, rho, &pf, &y, &y_d, None).unwrap();
        assert!(slopes.iter().any(|m| *m > 0.0));
        // Jacobian J = A + (1/ρ) diag(m')(I − Φ'); check Jᵀ p = y_d − y.
        let jphi = map.jacobian_dense(&y).unwrap();
        let mut j = a.to_dense();
        for i in 0..n {
            for k in 0..n {
                let id = if i == k { 1.0 } else { 0.0 };
                j[(i, k)] += slopes[i] / rho * (id - jphi[(i, k)]);
            }
        }
        let r = j.transpose() * nalgebra::DVector::from_column_slice(&p);
        for i in 0..n {
            assert!((r[i] - (y_d[i] - y[i])).abs() < 1e-9 * (1.0 + r[i].abs()));
        }
    }
}
