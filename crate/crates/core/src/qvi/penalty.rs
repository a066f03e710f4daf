//! Smoothed-max penalization `Ay + (1/ρ) m_ρ(y − Φ(y)) = f`.

use nalgebra::DMatrix;
use sprs::TriMat;

use crate::error::{check_len, Error, Result};
use crate::linsolve::{matvec, solve_auto, DenseLu};
use crate::mesh::{DiscreteOperator, OPERATOR_SOLVE_TOL};
use crate::obstacle::ObstacleMap;
use crate::vector::{norm2, DualVector, StateVector};

pub const NEWTON_MAX_ITER: usize = 100;
pub const NEWTON_MAX_HALVINGS: usize = 30;

/// `m(r) = 0` for `r ≤ 0`, `r²/(2ε)` on `(0, ε)`, `r − ε/2` beyond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyFunction {
    pub epsilon: f64,
}

impl PenaltyFunction {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    pub fn eval(&self, r: f64) -> f64 {
        if r <= 0.0 {
            0.0
        } else if r < self.epsilon {
            r * r / (2.0 * self.epsilon)
        } else {
            r - 0.5 * self.epsilon
        }
    }

    pub fn deriv(&self, r: f64) -> f64 {
        if r <= 0.0 {
            0.0
        } else if r < self.epsilon {
            r / self.epsilon
        } else {
            1.0
        }
    }
}

/// Smoothing width as a function of `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum EpsRule {
    #[default]
    EqualsRho,
    Scaled(f64),
    Constant(f64),
}

impl EpsRule {
    pub fn epsilon(&self, rho: f64) -> f64 {
        match self {
            EpsRule::EqualsRho => rho,
            EpsRule::Scaled(c) => c * rho,
            EpsRule::Constant(e) => *e,
        }
    }

    pub fn penalty(&self, rho: f64) -> Result<PenaltyFunction> {
        PenaltyFunction::new(self.epsilon(rho))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySolveReport {
    pub iterations: usize,
    pub halvings: usize,
    /// `‖R(y)‖₂` at the returned iterate.
    pub residual: f64,
    /// `tol·(1 + ‖f‖)`.
    pub threshold: f64,
    /// Rounding level of the residual evaluation at the returned iterate.
    pub noise_floor: f64,
}

impl PenaltySolveReport {
    pub fn converged(&self) -> bool {
        self.residual <= self.threshold.max(self.noise_floor)
    }
}

pub(crate) struct PenaltyEval {
    pub residual: Vec<f64>,
    pub gap: Vec<f64>,
    pub noise: f64,
}

pub(crate) fn penalized_residual(
    a: &DiscreteOperator,
    f: &[f64],
    map: &ObstacleMap,
    rho: f64,
    pf: &PenaltyFunction,
    y: &[f64],
) -> Result<PenaltyEval> {
    let phi = map.eval(y)?;
    let ay = matvec(&a.matrix, y);
    let abs_ay = abs_matvec(a, y);
    let n = y.len();
    let mut residual = vec![0.0; n];
    let mut gap = vec![0.0; n];
    let mut scale: f64 = 0.0;
    for i in 0..n {
        gap[i] = y[i] - phi[i];
        residual[i] = ay[i] + pf.eval(gap[i]) / rho - f[i];
        scale = scale.max(abs_ay[i] + f[i].abs() + (y[i].abs() + phi[i].abs()) / rho);
    }
    let noise = 16.0 * f64::EPSILON * (n as f64).sqrt() * scale;
    Ok(PenaltyEval {
        residual,
        gap,
        noise,
    })
}

fn abs_matvec(a: &DiscreteOperator, y: &[f64]) -> Vec<f64> {
    a.matrix
        .outer_iterator()
        .map(|row| row.iter().map(|(j, v)| (v * y[j]).abs()).sum())
        .collect()
}

/// Solve `J dy = rhs` for the penalized Jacobian `A + (1/ρ) diag(m') (I − Φ'(y))`.
fn newton_step(
    a: &DiscreteOperator,
    map: &ObstacleMap,
    rho: f64,
    slopes: &[f64],
    y: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = y.len();
    let diagonal_map = match map {
        ObstacleMap::Constant(_) => Some(0.0),
        ObstacleMap::AffineScaling { scale, .. } => Some(*scale),
        _ => None,
    };
    if let Some(s) = diagonal_map {
        let mut t = TriMat::new((n, n));
        for (v, (i, j)) in a.matrix.iter() {
            t.add_triplet(i, j, *v);
        }
        for (i, m) in slopes.iter().enumerate() {
            if *m != 0.0 {
                t.add_triplet(i, i, m * (1.0 - s) / rho);
            }
        }
        let (x, _) = solve_auto(&t.to_csr(), rhs, OPERATOR_SOLVE_TOL)?;
        return Ok(x);
    }
    let jphi = map.jacobian_dense(y)?;
    let mut j: DMatrix<f64> = a.to_dense();
    for (i, m) in slopes.iter().enumerate() {
        if *m == 0.0 {
            continue;
        }
        let c = m / rho;
        for k in 0..n {
            let id = if i == k { 1.0 } else { 0.0 };
            j[(i, k)] += c * (id - jphi[(i, k)]);
        }
    }
    Ok(DenseLu::new(j)?.solve(rhs)?)
}

/// Damped semismooth Newton for the penalized equation.
pub fn solve_penalized(
    a: &DiscreteOperator,
    f: &DualVector,
    map: &ObstacleMap,
    rho: f64,
    pf: &PenaltyFunction,
    tol: f64,
    start: Option<&StateVector>,
) -> Result<(StateVector, PenaltySolveReport)> {
    let n = a.node_count();
    check_len(n, f.len())?;
    check_len(n, map.node_count())?;
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidInput(format!("rho must be positive, got {rho}")));
    }
    let mut y: Vec<f64> = match start {
        Some(s) => {
            check_len(n, s.len())?;
            s.to_vec()
        }
        None => a.solve(f)?.into_inner(),
    };
    let threshold = tol * (1.0 + f.norm());
    let mut halvings = 0;
    let mut ev = penalized_residual(a, f, map, rho, pf, &y)?;
    let mut nr = norm2(&ev.residual);
    for it in 0..NEWTON_MAX_ITER {
        if nr <= threshold.max(ev.noise) {
            return Ok((
                StateVector::new(y),
                PenaltySolveReport {
                    iterations: it,
                    halvings,
                    residual: nr,
                    threshold,
                    noise_floor: ev.noise,
                },
            ));
        }
        let slopes: Vec<f64> = ev.gap.iter().map(|g| pf.deriv(*g)).collect();
        let rhs: Vec<f64> = ev.residual.iter().map(|r| -r).collect();
        let dy = newton_step(a, map, rho, &slopes, &y, &rhs)?;
        let mut t = 1.0;
        let mut accepted = None;
        for k in 0..=NEWTON_MAX_HALVINGS {
            let trial: Vec<f64> = y.iter().zip(&dy).map(|(v, d)| v + t * d).collect();
            let tev = penalized_residual(a, f, map, rho, pf, &trial)?;
            let tn = norm2(&tev.residual);
            if tn < nr {
                halvings += k;
                accepted = Some((trial, tev, tn));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, tev, tn)) => {
                y = trial;
                ev = tev;
                nr = tn;
            }
            None if nr <= 100.0 * ev.noise.max(threshold) => {
                return Ok((
                    StateVector::new(y),
                    PenaltySolveReport {
                        iterations: it,
                        halvings,
                        residual: nr,
                        threshold,
                        noise_floor: 100.0 * ev.noise,
                    },
                ));
            }
            None => {
                return Err(Error::NotConverged {
                    what: "penalized Newton line search",
                    iterations: it,
                    residual: nr,
                });
            }
        }
    }
    Err(Error::NotConverged {
        what: "penalized Newton",
        iterations: NEWTON_MAX_ITER,
        residual: nr,
    })
}
