//! Sparse Krylov solvers with a dense LU fallback.

use nalgebra::{DMatrix, DVector};
use sprs::CsMat;
use thiserror::Error;

use crate::vector::{axpy, dot, norm2};

/// Systems at or below this size are solved by dense LU directly.
pub const DENSE_DIRECT_LIMIT: usize = 512;
/// Largest system the dense fallback will factor.
pub const DENSE_FALLBACK_LIMIT: usize = 2000;
/// Pivots with magnitude below this are treated as singular.
pub const PIVOT_TOL: f64 = 1e-14;

const GMRES_RESTART: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinsolveError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },

    #[error("right-hand side has length {found}, matrix has {expected} rows")]
    RhsLength { expected: usize, found: usize },

    #[error("tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),

    #[error("linear solve did not converge: {iterations} iterations, residual {residual:e} > {threshold:e}")]
    NotConverged {
        iterations: usize,
        residual: f64,
        threshold: f64,
    },

    #[error("matrix is singular: pivot {pivot:e} at column {column}")]
    Singular { pivot: f64, column: usize },

    #[error("dense solve requested for {n} unknowns (limit {limit})")]
    TooLarge { n: usize, limit: usize },
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `‖b − Mx‖₂` at the returned iterate.
    pub final_residual: f64,
    pub converged: bool,
    pub method: SolveMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Cg,
    Gmres,
    DenseLu,
}

/// Residual threshold used by every solver here: `tol·(1 + ‖b‖)`.
pub fn threshold(tol: f64, b: &[f64]) -> f64 {
    tol * (1.0 + norm2(b))
}

pub fn matvec(m: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.rows()];
    matvec_into(m, x, &mut y);
    y
}

fn matvec_into(m: &CsMat<f64>, x: &[f64], y: &mut [f64]) {
    if m.is_csr() {
        for (i, row) in m.outer_iterator().enumerate() {
            y[i] = row.iter().map(|(j, v)| v * x[j]).sum();
        }
    } else {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (j, col) in m.outer_iterator().enumerate() {
            for (i, v) in col.iter() {
                y[i] += v * x[j];
            }
        }
    }
}

/// `Mᵀx` without forming the transpose.
pub fn matvec_transpose(m: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.cols()];
    if m.is_csr() {
        for (i, row) in m.outer_iterator().enumerate() {
            for (j, v) in row.iter() {
                y[j] += v * x[i];
            }
        }
    } else {
        for (j, col) in m.outer_iterator().enumerate() {
            y[j] = col.iter().map(|(i, v)| v * x[i]).sum();
        }
    }
    y
}

pub fn residual_norm(m: &CsMat<f64>, x: &[f64], b: &[f64]) -> f64 {
    let mx = matvec(m, x);
    mx.iter()
        .zip(b)
        .map(|(a, c)| (c - a) * (c - a))
        .sum::<f64>()
        .sqrt()
}

pub fn sparse_to_dense(m: &CsMat<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.rows(), m.cols());
    for (v, (i, j)) in m.iter() {
        d[(i, j)] += *v;
    }
    d
}

fn check_shapes(rows: usize, cols: usize, b_len: usize) -> Result<(), LinsolveError> {
    if rows != cols {
        return Err(LinsolveError::NotSquare { rows, cols });
    }
    if b_len != rows {
        return Err(LinsolveError::RhsLength {
            expected: rows,
            found: b_len,
        });
    }
    Ok(())
}

/// Whether `m` equals its transpose up to a relative tolerance.
pub fn is_symmetric(m: &CsMat<f64>, rel_tol: f64) -> bool {
    let t = m.transpose_view().to_csr();
    let m = m.to_csr();
    let scale = m.data().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for (i, row) in m.outer_iterator().enumerate() {
        let trow = t.outer_view(i).expect("row in range");
        for (j, v) in row.iter() {
            let tv = trow.get(j).copied().unwrap_or(0.0);
            if (v - tv).abs() > rel_tol * scale {
                return false;
            }
        }
        for (j, tv) in trow.iter() {
            if row.get(j).is_none() && tv.abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Solve `Mx = b` iteratively.
///
/// Jacobi-preconditioned CG is used for symmetric matrices with a positive
/// diagonal, restarted GMRES otherwise. If the Krylov method fails and the
/// system has at most [`DENSE_FALLBACK_LIMIT`] unknowns, dense LU is tried.
/// Every failure surfaces as [`LinsolveError::NotConverged`].
pub fn solve_sparse(
    m: &CsMat<f64>,
    b: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, SolveReport), LinsolveError> {
    check_shapes(m.rows(), m.cols(), b.len())?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(LinsolveError::BadTolerance(tol));
    }
    let n = b.len();
    let thr = threshold(tol, b);
    if norm2(b) == 0.0 {
        let report = SolveReport {
            iterations: 0,
            final_residual: 0.0,
            converged: true,
            method: SolveMethod::Cg,
        };
        return Ok((vec![0.0; n], report));
    }
    let m = m.to_csr();
    let cap = 10 * n.max(1);
    let diag = diagonal(&m);

    let mut best: Option<(Vec<f64>, SolveReport)> = None;
    if diag.iter().all(|&d| d > 0.0) && is_symmetric(&m, 1e-12) {
        let (x, its) = pcg(&m, b, &diag, thr, cap);
        let r = residual_norm(&m, &x, b);
        let rep = SolveReport {
            iterations: its,
            final_residual: r,
            converged: r <= thr,
            method: SolveMethod::Cg,
        };
        if rep.converged {
            return Ok((x, rep));
        }
        best = Some((x, rep));
    }
    let (x, its) = gmres(&m, b, thr, cap);
    let r = residual_norm(&m, &x, b);
    let rep = SolveReport {
        iterations: its,
        final_residual: r,
        converged: r <= thr,
        method: SolveMethod::Gmres,
    };
    if rep.converged {
        return Ok((x, rep));
    }
    if best.as_ref().is_none_or(|(_, b)| rep.final_residual < b.final_residual) {
        best = Some((x, rep));
    }
    let (_, last) = best.expect("at least one Krylov attempt ran");

    if n <= DENSE_FALLBACK_LIMIT {
        if let Ok(x) = solve_dense(&sparse_to_dense(&m), b) {
            let r = residual_norm(&m, &x, b);
            if r <= thr {
                let rep = SolveReport {
                    iterations: last.iterations,
                    final_residual: r,
                    converged: true,
                    method: SolveMethod::DenseLu,
                };
                return Ok((x, rep));
            }
        }
    }
    Err(LinsolveError::NotConverged {
        iterations: last.iterations,
        residual: last.final_residual,
        threshold: thr,
    })
}

/// Dense LU for small systems, [`solve_sparse`] above [`DENSE_DIRECT_LIMIT`].
pub fn solve_auto(
    m: &CsMat<f64>,
    b: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, SolveReport), LinsolveError> {
    check_shapes(m.rows(), m.cols(), b.len())?;
    if b.len() <= DENSE_DIRECT_LIMIT {
        let x = solve_dense(&sparse_to_dense(m), b)?;
        let r = residual_norm(m, &x, b);
        let rep = SolveReport {
            iterations: 0,
            final_residual: r,
            converged: true,
            method: SolveMethod::DenseLu,
        };
        return Ok((x, rep));
    }
    solve_sparse(m, b, tol)
}

fn diagonal(m: &CsMat<f64>) -> Vec<f64> {
    (0..m.rows())
        .map(|i| m.get(i, i).copied().unwrap_or(0.0))
        .collect()
}

fn pcg(m: &CsMat<f64>, b: &[f64], diag: &[f64], thr: f64, cap: usize) -> (Vec<f64>, usize) {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=cap {
        matvec_into(m, &p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return (x, it);
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        if norm2(&r) <= 0.5 * thr {
            return (x, it);
        }
        for ((zi, ri), d) in z.iter_mut().zip(&r).zip(diag) {
            *zi = ri / d;
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    (x, cap)
}

/// Restarted GMRES with modified Gram-Schmidt and Givens rotations.
fn gmres(m: &CsMat<f64>, b: &[f64], thr: f64, cap: usize) -> (Vec<f64>, usize) {
    let n = b.len();
    let k = GMRES_RESTART.min(n);
    let mut x = vec![0.0; n];
    let mut total = 0;
    while total < cap {
        let mx = matvec(m, &x);
        let r: Vec<f64> = b.iter().zip(&mx).map(|(bi, ai)| bi - ai).collect();
        let beta = norm2(&r);
        if beta <= 0.5 * thr {
            break;
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess = vec![vec![0.0; k]; k + 1];
        let mut cs = vec![0.0; k];
        let mut sn = vec![0.0; k];
        let mut g = vec![0.0; k + 1];
        g[0] = beta;
        let mut used = 0;
        for j in 0..k {
            if total >= cap {
                break;
            }
            total += 1;
            let mut w = matvec(m, &basis[j]);
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                hess[i][j] = hij;
                axpy(-hij, v, &mut w);
            }
            let wn = norm2(&w);
            hess[j + 1][j] = wn;
            for i in 0..j {
                let t = cs[i] * hess[i][j] + sn[i] * hess[i + 1][j];
                hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
                hess[i][j] = t;
            }
            let denom = hess[j][j].hypot(hess[j + 1][j]);
            if denom == 0.0 {
                break;
            }
            cs[j] = hess[j][j] / denom;
            sn[j] = hess[j + 1][j] / denom;
            hess[j][j] = denom;
            hess[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            if g[j + 1].abs() <= 0.5 * thr || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        if used == 0 {
            break;
        }
        let mut yk = vec![0.0; used];
        for i in (0..used).rev() {
            let s: f64 = (i + 1..used).map(|l| hess[i][l] * yk[l]).sum();
            yk[i] = (g[i] - s) / hess[i][i];
        }
        for (i, yi) in yk.iter().enumerate() {
            axpy(*yi, &basis[i], &mut x);
        }
    }
    (x, total)
}

/// LU with partial pivoting, factored once and reusable.
#[derive(Debug, Clone)]
pub struct DenseLu {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DenseLu {
    pub fn new(m: DMatrix<f64>) -> Result<Self, LinsolveError> {
        if m.nrows() != m.ncols() {
            return Err(LinsolveError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.nrows() > DENSE_FALLBACK_LIMIT {
            return Err(LinsolveError::TooLarge {
                n: m.nrows(),
                limit: DENSE_FALLBACK_LIMIT,
            });
        }
        let lu = m.lu();
        let u = lu.u();
        for (column, pivot) in u.diagonal().iter().enumerate() {
            if pivot.abs() < PIVOT_TOL || !pivot.is_finite() {
                return Err(LinsolveError::Singular {
                    pivot: *pivot,
                    column,
                });
            }
        }
        Ok(Self { lu })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinsolveError> {
        let n = self.lu.l().nrows();
        if b.len() != n {
            return Err(LinsolveError::RhsLength {
                expected: n,
                found: b.len(),
            });
        }
        let rhs = DVector::from_column_slice(b);
        self.lu
            .solve(&rhs)
            .map(|x| x.as_slice().to_vec())
            .ok_or(LinsolveError::Singular {
                pivot: 0.0,
                column: 0,
            })
    }
}

/// Solve a dense system by LU with partial pivoting.
pub fn solve_dense(m: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>, LinsolveError> {
    check_shapes(m.nrows(), m.ncols(), b.len())?;
    DenseLu::new(m.clone())?.solve(b)
}
