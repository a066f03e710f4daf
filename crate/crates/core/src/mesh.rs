//! Uniform grids on the unit interval/square and finite-difference
//! assembly of second-order elliptic operators with homogeneous Dirichlet
//! boundary conditions.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use sprs::{CsMat, TriMat};

use crate::error::{check_len, Error, Result};
use crate::linsolve::{
    self, matvec, matvec_transpose, solve_sparse, sparse_to_dense, DenseLu, LinsolveError,
    SolveReport, DENSE_FALLBACK_LIMIT,
};
use crate::spectral::{power_iteration, SpectralEstimate};
use crate::vector::{DualVector, StateVector};

/// Tolerance used for internal solves with the operator.
pub const OPERATOR_SOLVE_TOL: f64 = 1e-13;
const DENSE_SVD_LIMIT: usize = 1100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub n_per_axis: usize,
    pub h: f64,
    pub node_count: usize,
}

impl Grid {
    /// Weight `h^dim` turning Euclidean sums into quadrature.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Physical coordinates of node `k`; node `(i, j)` is stored at `i + n*j`.
    pub fn coords(&self, k: usize) -> [f64; 2] {
        let n = self.n_per_axis;
        let i = k % n;
        let j = k / n;
        let x = (i as f64 + 1.0) * self.h;
        if self.dim == 1 {
            [x, 0.0]
        } else {
            [x, (j as f64 + 1.0) * self.h]
        }
    }
}

pub fn build_grid(dim: usize, n_per_axis: usize) -> Result<Grid> {
    if !(dim == 1 || dim == 2) {
        return Err(Error::InvalidInput(format!("dim must be 1 or 2, got {dim}")));
    }
    if n_per_axis == 0 {
        return Err(Error::InvalidInput("n_per_axis must be at least 1".into()));
    }
    Ok(Grid {
        dim,
        n_per_axis,
        h: 1.0 / (n_per_axis as f64 + 1.0),
        node_count: n_per_axis.pow(dim as u32),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdvectionScheme {
    /// One-sided differences against the flow; keeps the M-matrix pattern.
    #[default]
    Upwind,
    /// Centered differences; off-diagonals turn positive once the cell
    /// Péclet number exceeds 2.
    Central,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    pub diffusion: f64,
    /// One entry per axis (missing axes count as zero).
    pub advection: Vec<f64>,
    pub reaction: f64,
    pub scheme: AdvectionScheme,
    /// Fail assembly unless every off-diagonal entry is nonpositive.
    pub require_t_monotone: bool,
}

impl OperatorSpec {
    pub fn laplacian() -> Self {
        Self {
            diffusion: 1.0,
            advection: Vec::new(),
            reaction: 0.0,
            scheme: AdvectionScheme::Upwind,
            require_t_monotone: false,
        }
    }
}

/// How a spectral constant was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantProvenance {
    pub method: &'static str,
    pub iterations: usize,
    pub converged: bool,
}

impl ConstantProvenance {
    fn from_estimate(method: &'static str, est: &SpectralEstimate) -> Self {
        Self {
            method,
            iterations: est.iterations,
            converged: est.converged,
        }
    }
}

/// Assembled operator `A` with its coercivity constant `c_a` and bound `c_b`.
#[derive(Debug)]
pub struct DiscreteOperator {
    pub grid: Grid,
    pub matrix: CsMat<f64>,
    pub c_a: f64,
    pub c_b: f64,
    pub is_t_monotone: bool,
    pub c_a_provenance: ConstantProvenance,
    pub c_b_provenance: ConstantProvenance,
    lu: OnceLock<std::result::Result<DenseLu, LinsolveError>>,
    lu_t: OnceLock<std::result::Result<DenseLu, LinsolveError>>,
}

impl Clone for DiscreteOperator {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid,
            matrix: self.matrix.clone(),
            c_a: self.c_a,
            c_b: self.c_b,
            is_t_monotone: self.is_t_monotone,
            c_a_provenance: self.c_a_provenance,
            c_b_provenance: self.c_b_provenance,
            lu: OnceLock::new(),
            lu_t: OnceLock::new(),
        }
    }
}

pub fn assemble_operator(grid: Grid, spec: &OperatorSpec) -> Result<DiscreteOperator> {
    if !(spec.diffusion > 0.0 && spec.diffusion.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "diffusion must be positive, got {}",
            spec.diffusion
        )));
    }
    if !(spec.reaction >= 0.0 && spec.reaction.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "reaction must be nonnegative, got {}",
            spec.reaction
        )));
    }
    if spec.advection.len() > grid.dim || spec.advection.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "advection needs at most {} finite components",
            grid.dim
        )));
    }
    let matrix = stencil(&grid, spec);

    let mut is_t_monotone = true;
    for (v, (i, j)) in matrix.iter() {
        if i != j && *v > 0.0 {
            if spec.require_t_monotone {
                return Err(Error::SignPattern {
                    row: i,
                    col: j,
                    value: *v,
                });
            }
            is_t_monotone = false;
        }
    }

    let (c_a, c_a_provenance) = coercivity_constant(&matrix)?;
    let (c_b, c_b_provenance) = boundedness_constant(&matrix)?;
    // c_b can fall short of c_a only through roundoff.
    let c_b = c_b.max(c_a);

    Ok(DiscreteOperator {
        grid,
        matrix,
        c_a,
        c_b,
        is_t_monotone,
        c_a_provenance,
        c_b_provenance,
        lu: OnceLock::new(),
        lu_t: OnceLock::new(),
    })
}

fn stencil(grid: &Grid, spec: &OperatorSpec) -> CsMat<f64> {
    let n = grid.n_per_axis;
    let nn = grid.node_count;
    let h = grid.h;
    let diff = spec.diffusion / (h * h);
    let mut t = TriMat::with_capacity((nn, nn), nn * (2 * grid.dim + 1));
    for k in 0..nn {
        let idx = [k % n, k / n];
        let mut diag = 2.0 * grid.dim as f64 * diff + spec.reaction;
        for (axis, &pos) in idx.iter().enumerate().take(grid.dim) {
            let stride = if axis == 0 { 1 } else { n };
            let b = spec.advection.get(axis).copied().unwrap_or(0.0);
            let (mut lo, mut hi) = (-diff, -diff);
            match spec.scheme {
                AdvectionScheme::Upwind => {
                    diag += b.abs() / h;
                    if b > 0.0 {
                        lo -= b / h;
                    } else {
                        hi += b / h;
                    }
                }
                AdvectionScheme::Central => {
                    lo -= b / (2.0 * h);
                    hi += b / (2.0 * h);
                }
            }
            if pos > 0 {
                t.add_triplet(k, k - stride, lo);
            }
            if pos + 1 < n {
                t.add_triplet(k, k + stride, hi);
            }
        }
        t.add_triplet(k, k, diag);
    }
    t.to_csr()
}

/// Largest singular value of `m`. Power iteration on `MᵀM` first; when it
/// stalls (clustered top spectrum) a dense SVD is used at desk scale and
/// the Hölder bound `sqrt(‖M‖₁‖M‖_∞)` beyond.
fn boundedness_constant(m: &CsMat<f64>) -> Result<(f64, ConstantProvenance)> {
    let n = m.rows();
    let est = power_iteration::<_, Error>(n, |x| Ok(matvec_transpose(m, &matvec(m, x))))?;
    if est.converged {
        return Ok((
            est.value.max(0.0).sqrt(),
            ConstantProvenance::from_estimate("power_iteration(AᵀA)", &est),
        ));
    }
    if n <= DENSE_SVD_LIMIT {
        let sv = sparse_to_dense(m).singular_values();
        let prov = ConstantProvenance {
            method: "dense_svd",
            iterations: est.iterations,
            converged: true,
        };
        return Ok((sv.max(), prov));
    }
    let mut col = vec![0.0; n];
    let mut row = vec![0.0; n];
    for (v, (i, j)) in m.iter() {
        row[i] += v.abs();
        col[j] += v.abs();
    }
    let norm1 = col.iter().fold(0.0f64, |a, b| a.max(*b));
    let norm_inf = row.iter().fold(0.0f64, |a, b| a.max(*b));
    let prov = ConstantProvenance {
        method: "holder_bound",
        iterations: est.iterations,
        converged: true,
    };
    Ok(((norm1 * norm_inf).sqrt(), prov))
}

/// Smallest eigenvalue of the symmetric part, by inverse iteration.
///
/// At desk scale the symmetric part is Cholesky-factored first; failure
/// proves it is not positive definite.
fn coercivity_constant(m: &CsMat<f64>) -> Result<(f64, ConstantProvenance)> {
    let n = m.rows();
    let mt = m.transpose_view().to_csr();
    let sym: CsMat<f64> = (&m.to_csr() + &mt).map(|v| 0.5 * v);
    if n <= DENSE_FALLBACK_LIMIT {
        let dense = sparse_to_dense(&sym);
        let Some(chol) = dense.clone().cholesky() else {
            let gersh = gershgorin_upper(&dense);
            let est = power_iteration::<_, Error>(n, |x| {
                let sx = &dense * nalgebra::DVector::from_column_slice(x);
                Ok(x.iter().zip(sx.iter()).map(|(a, b)| gersh * a - b).collect())
            })?;
            return Err(Error::NotCoercive {
                c_a: (gersh - est.value).min(0.0),
            });
        };
        let est = power_iteration::<_, Error>(n, |x| {
            Ok(chol
                .solve(&nalgebra::DVector::from_column_slice(x))
                .as_slice()
                .to_vec())
        })?;
        let c_a = 1.0 / est.value;
        return Ok((
            c_a,
            ConstantProvenance::from_estimate("inverse_iteration(sym(A))", &est),
        ));
    }
    let est = power_iteration::<_, Error>(n, |x| {
        solve_sparse(&sym, x, OPERATOR_SOLVE_TOL)
            .map(|(y, _)| y)
            .map_err(|_| Error::NotCoercive { c_a: f64::NAN })
    })?;
    let c_a = 1.0 / est.value;
    if !(c_a > 0.0) {
        return Err(Error::NotCoercive { c_a });
    }
    Ok((
        c_a,
        ConstantProvenance::from_estimate("inverse_iteration(sym(A))", &est),
    ))
}

fn gershgorin_upper(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .enumerate()
        .map(|(i, r)| {
            r.iter()
                .enumerate()
                .map(|(j, v)| if i == j { *v } else { v.abs() })
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

impl DiscreteOperator {
    pub fn node_count(&self) -> usize {
        self.grid.node_count
    }

    pub fn apply(&self, u: &[f64]) -> Result<DualVector> {
        check_len(self.node_count(), u.len())?;
        Ok(DualVector::new(matvec(&self.matrix, u)))
    }

    pub fn apply_transpose(&self, u: &[f64]) -> Result<DualVector> {
        check_len(self.node_count(), u.len())?;
        Ok(DualVector::new(matvec_transpose(&self.matrix, u)))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        sparse_to_dense(&self.matrix)
    }

    fn factor(&self, transpose: bool) -> std::result::Result<&DenseLu, LinsolveError> {
        let cell = if transpose { &self.lu_t } else { &self.lu };
        cell.get_or_init(|| {
            let d = self.to_dense();
            DenseLu::new(if transpose { d.transpose() } else { d })
        })
        .as_ref()
        .map_err(Clone::clone)
    }

    /// `A⁻¹f`. Desk-scale systems reuse a cached dense factorization.
    pub fn solve(&self, f: &[f64]) -> Result<StateVector> {
        self.solve_impl(f, false).map(|(x, _)| x)
    }

    /// `A⁻ᵀg`.
    pub fn solve_transpose(&self, g: &[f64]) -> Result<StateVector> {
        self.solve_impl(g, true).map(|(x, _)| x)
    }

    pub fn solve_with_report(&self, f: &[f64]) -> Result<(StateVector, SolveReport)> {
        self.solve_impl(f, false)
    }

    fn solve_impl(&self, f: &[f64], transpose: bool) -> Result<(StateVector, SolveReport)> {
        check_len(self.node_count(), f.len())?;
        if self.node_count() <= linsolve::DENSE_DIRECT_LIMIT {
            let x = self.factor(transpose)?.solve(f)?;
            let r = if transpose {
                let ax = matvec_transpose(&self.matrix, &x);
                crate::vector::dist2(&ax, f)
            } else {
                linsolve::residual_norm(&self.matrix, &x, f)
            };
            let report = SolveReport {
                iterations: 0,
                final_residual: r,
                converged: true,
                method: linsolve::SolveMethod::DenseLu,
            };
            return Ok((StateVector::new(x), report));
        }
        let (x, report) = if transpose {
            let mt = self.matrix.transpose_view().to_csr();
            solve_sparse(&mt, f, OPERATOR_SOLVE_TOL)?
        } else {
            solve_sparse(&self.matrix, f, OPERATOR_SOLVE_TOL)?
        };
        Ok((StateVector::new(x), report))
    }
}
