//! Obstacle problems `y ≤ ψ, ξ = f − Ay ≥ 0, ξ·(ψ − y) = 0` and the
//! variational inequality over a discrete critical cone.

use std::collections::BTreeSet;

use sprs::{CsMat, TriMat};

use crate::error::{check_len, Error, Result};
use crate::linsolve::{matvec, solve_auto};
use crate::mesh::{DiscreteOperator, OPERATOR_SOLVE_TOL};
use crate::vector::{norm_inf, DualVector, StateVector};

/// Relative size of the active-set, strong-activity and complementarity
/// thresholds.
pub const SET_TOL: f64 = 1e-8;
pub const PSOR_OMEGA: f64 = 1.5;
pub const PSOR_MAX_SWEEPS: usize = 100_000;

/// Thresholds used to turn exact set conditions into nodewise tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// `ψ_i − y_i ≤ tol_act` counts as touching.
    pub tol_act: f64,
    /// `ξ_i > tol_str` counts as strongly active.
    pub tol_str: f64,
    /// Bound on `−ξ_i` and on `|ξ_i (ψ_i − y_i)|`.
    pub tol_comp: f64,
}

impl Thresholds {
    pub fn new(f: &[f64], psi: &[f64]) -> Self {
        let psi_inf = finite_norm_inf(psi);
        let f_inf = norm_inf(f);
        Self {
            tol_act: SET_TOL * (1.0 + psi_inf),
            tol_str: SET_TOL * (1.0 + f_inf),
            tol_comp: SET_TOL * (1.0 + f_inf) * (1.0 + psi_inf),
        }
    }
}

pub(crate) fn finite_norm_inf(v: &[f64]) -> f64 {
    v.iter()
        .filter(|x| x.is_finite())
        .fold(0.0, |m, x| m.max(x.abs()))
}

/// Nodewise complementarity residuals of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualReport {
    /// `max (y − ψ)⁺`.
    pub feasibility: f64,
    /// `max (−ξ)⁺`.
    pub dual: f64,
    /// `max |ξ_i (ψ_i − y_i)|`; nodes with `ψ_i = +∞` contribute `|ξ_i|`.
    pub complementarity: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.feasibility.max(self.dual).max(self.complementarity)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

pub(crate) fn residuals_from(xi: &[f64], psi: &[f64], y: &[f64]) -> ResidualReport {
    let mut r = ResidualReport::default();
    for ((x, p), v) in xi.iter().zip(psi).zip(y) {
        r.feasibility = r.feasibility.max(v - p);
        r.dual = r.dual.max(-x);
        let c = if p.is_finite() {
            (x * (p - v)).abs()
        } else {
            x.abs()
        };
        r.complementarity = r.complementarity.max(c);
    }
    // Normalize signed zeros from `max(0, −0)`.
    r.feasibility += 0.0;
    r.dual += 0.0;
    r
}

pub fn vi_residual(
    a: &DiscreteOperator,
    f: &DualVector,
    psi: &StateVector,
    y: &StateVector,
) -> Result<ResidualReport> {
    check_len(a.node_count(), f.len())?;
    check_len(a.node_count(), psi.len())?;
    let ay = a.apply(y)?;
    let xi: Vec<f64> = f.iter().zip(ay.iter()).map(|(fi, ai)| fi - ai).collect();
    Ok(residuals_from(&xi, psi, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViMethod {
    Pdas,
    ProjectedSor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViReport {
    pub method: ViMethod,
    pub iterations: usize,
    pub residuals: ResidualReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViSolution {
    pub y: StateVector,
    pub xi: DualVector,
    /// Nodes with `ψ_i − y_i ≤ tol_act`, ascending.
    pub active: Vec<usize>,
    pub thresholds: Thresholds,
    pub report: ViReport,
}

/// Node classification for a solution of an obstacle problem: inactive
/// `{ψ − y > tol_act}`, strongly active `{ξ > tol_str}` among the rest, and
/// biactive for whatever remains.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSets {
    pub inactive: Vec<usize>,
    pub strongly_active: Vec<usize>,
    pub biactive: Vec<usize>,
    pub thresholds: Thresholds,
}

impl ActiveSets {
    /// The gap test takes precedence so the three sets always partition
    /// the nodes.
    pub fn classify(gap: &[f64], xi: &[f64], th: &Thresholds) -> Self {
        let mut s = Self {
            inactive: Vec::new(),
            strongly_active: Vec::new(),
            biactive: Vec::new(),
            thresholds: *th,
        };
        for (i, (g, x)) in gap.iter().zip(xi).enumerate() {
            if *g > th.tol_act {
                s.inactive.push(i);
            } else if *x > th.tol_str {
                s.strongly_active.push(i);
            } else {
                s.biactive.push(i);
            }
        }
        s
    }

    pub fn active(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .strongly_active
            .iter()
            .chain(&self.biactive)
            .copied()
            .collect();
        v.sort_unstable();
        v
    }

    pub fn len(&self) -> usize {
        self.inactive.len() + self.strongly_active.len() + self.biactive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_obstacle(psi: &[f64]) -> Result<()> {
    if let Some(i) = psi.iter().position(|p| p.is_nan() || *p == f64::NEG_INFINITY) {
        return Err(Error::InvalidInput(format!(
            "obstacle at node {i} is {}; entries must be finite or +inf",
            psi[i]
        )));
    }
    Ok(())
}

/// Solve the obstacle problem `y ≤ ψ` with load `f`.
///
/// Primal-dual active sets with `c = 1`; projected SOR if the active set
/// cycles or the PDAS result fails its residual check.
pub fn solve_vi_upper(
    a: &DiscreteOperator,
    f: &DualVector,
    psi: &StateVector,
    tol: f64,
) -> Result<ViSolution> {
    let n = a.node_count();
    check_len(n, f.len())?;
    check_len(n, psi.len())?;
    check_obstacle(psi)?;
    if !f.is_finite() {
        return Err(Error::InvalidInput("load has non-finite entries".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let th = Thresholds::new(f, psi);
    let y0 = a.solve(f)?;
    let (y, method, iterations) = obstacle_core(&a.matrix, f, psi, Some(y0.values()), tol, &th)?;
    let ay = matvec(&a.matrix, &y);
    let xi: Vec<f64> = f.iter().zip(&ay).map(|(fi, ai)| fi - ai).collect();
    let residuals = residuals_from(&xi, psi, &y);
    let active = (0..n).filter(|&i| psi[i] - y[i] <= th.tol_act).collect();
    Ok(ViSolution {
        y: StateVector::new(y),
        xi: DualVector::new(xi),
        active,
        thresholds: th,
        report: ViReport {
            method,
            iterations,
            residuals,
        },
    })
}

/// PDAS with projected SOR fallback on a standalone matrix.
fn obstacle_core(
    m: &CsMat<f64>,
    g: &[f64],
    psi: &[f64],
    unconstrained: Option<&[f64]>,
    tol: f64,
    th: &Thresholds,
) -> Result<(Vec<f64>, ViMethod, usize)> {
    let n = g.len();
    if n == 0 {
        return Ok((Vec::new(), ViMethod::Pdas, 0));
    }
    let y_free = match unconstrained {
        Some(y) => y.to_vec(),
        None => solve_auto(m, g, OPERATOR_SOLVE_TOL)?.0,
    };
    if let Some((y, its)) = pdas(m, g, psi, y_free.clone())? {
        let ay = matvec(m, &y);
        let xi: Vec<f64> = g.iter().zip(&ay).map(|(gi, ai)| gi - ai).collect();
        let r = residuals_from(&xi, psi, &y);
        if r.feasibility <= th.tol_act && r.dual <= th.tol_comp && r.complementarity <= th.tol_comp
        {
            return Ok((y, ViMethod::Pdas, its));
        }
    }
    let start: Vec<f64> = y_free.iter().zip(psi).map(|(y, p)| y.min(*p)).collect();
    let (y, sweeps) = projected_sor(m, g, psi, start, tol)?;
    Ok((y, ViMethod::ProjectedSor, sweeps))
}

/// Returns `None` when the active set cycles.
fn pdas(
    m: &CsMat<f64>,
    g: &[f64],
    psi: &[f64],
    mut y: Vec<f64>,
) -> Result<Option<(Vec<f64>, usize)>> {
    let n = g.len();
    let mut xi = vec![0.0; n];
    let mut seen: BTreeSet<Vec<bool>> = BTreeSet::new();
    let mut prev: Option<Vec<bool>> = None;
    let cap = 2 * n + 50;
    for it in 0..cap {
        let active: Vec<bool> = (0..n)
            .map(|i| psi[i].is_finite() && xi[i] - (psi[i] - y[i]) > 0.0)
            .collect();
        if prev.as_ref() == Some(&active) {
            return Ok(Some((y, it)));
        }
        if !seen.insert(active.clone()) {
            return Ok(None);
        }
        y = reduced_solve(m, g, psi, &active)?;
        let my = matvec(m, &y);
        for i in 0..n {
            xi[i] = if active[i] { g[i] - my[i] } else { 0.0 };
        }
        prev = Some(active);
    }
    Ok(None)
}

/// Solve `y = ψ` on active nodes and `(My)_i = g_i` elsewhere.
fn reduced_solve(m: &CsMat<f64>, g: &[f64], psi: &[f64], active: &[bool]) -> Result<Vec<f64>> {
    let n = g.len();
    let inactive: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
    let mut y: Vec<f64> = (0..n).map(|i| if active[i] { psi[i] } else { 0.0 }).collect();
    if inactive.is_empty() {
        return Ok(y);
    }
    let fixed: Vec<f64> = (0..n).map(|i| if active[i] { psi[i] } else { 0.0 }).collect();
    let m_fixed = matvec(m, &fixed);
    let rhs: Vec<f64> = inactive.iter().map(|&i| g[i] - m_fixed[i]).collect();
    let sub = submatrix(m, &inactive);
    let (x, _) = solve_auto(&sub, &rhs, OPERATOR_SOLVE_TOL)?;
    for (k, &i) in inactive.iter().enumerate() {
        y[i] = x[k];
    }
    Ok(y)
}

/// Principal submatrix on `idx` (ascending).
pub(crate) fn submatrix(m: &CsMat<f64>, idx: &[usize]) -> CsMat<f64> {
    let mut map = vec![usize::MAX; m.rows()];
    for (k, &i) in idx.iter().enumerate() {
        map[i] = k;
    }
    let mut t = TriMat::new((idx.len(), idx.len()));
    for (v, (i, j)) in m.iter() {
        if map[i] != usize::MAX && map[j] != usize::MAX {
            t.add_triplet(map[i], map[j], *v);
        }
    }
    t.to_csr()
}

fn projected_sor(
    m: &CsMat<f64>,
    g: &[f64],
    psi: &[f64],
    mut y: Vec<f64>,
    tol: f64,
) -> Result<(Vec<f64>, usize)> {
    let m = m.to_csr();
    let n = g.len();
    let diag: Vec<f64> = (0..n).map(|i| m.get(i, i).copied().unwrap_or(0.0)).collect();
    if let Some(i) = diag.iter().position(|d| *d <= 0.0) {
        return Err(Error::InvalidInput(format!(
            "projected SOR needs a positive diagonal; entry {i} is {}",
            diag[i]
        )));
    }
    let mut last = f64::INFINITY;
    for sweep in 1..=PSOR_MAX_SWEEPS {
        let mut change: f64 = 0.0;
        for (i, row) in m.outer_iterator().enumerate() {
            let r: f64 = g[i] - row.iter().map(|(j, v)| v * y[j]).sum::<f64>();
            let next = (y[i] + PSOR_OMEGA * r / diag[i]).min(psi[i]);
            change = change.max((next - y[i]).abs());
            y[i] = next;
        }
        last = change;
        if change <= tol * 1e-3 * (1.0 + norm_inf(&y)) {
            return Ok((y, sweep));
        }
    }
    Err(Error::NotConverged {
        what: "projected SOR",
        iterations: PSOR_MAX_SWEEPS,
        residual: last,
    })
}

/// Index sets and affine offset describing the shifted critical cone.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalConeSpec {
    pub strongly_active: Vec<usize>,
    pub biactive: Vec<usize>,
    pub inactive: Vec<usize>,
    pub shift: StateVector,
}

impl CriticalConeSpec {
    pub fn from_sets(sets: &ActiveSets, n: usize) -> Self {
        Self {
            strongly_active: sets.strongly_active.clone(),
            biactive: sets.biactive.clone(),
            inactive: sets.inactive.clone(),
            shift: StateVector::zeros(n),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        check_len(n, self.shift.len())?;
        let mut seen = vec![false; n];
        for &i in self
            .strongly_active
            .iter()
            .chain(&self.biactive)
            .chain(&self.inactive)
        {
            if i >= n || seen[i] {
                return Err(Error::InvalidInput(format!(
                    "cone index sets must partition 0..{n}; node {i} is out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidInput(format!("node {i} missing from cone partition")));
        }
        Ok(())
    }
}

/// Solve for `β = shift + w` where `w = 0` on strongly active nodes,
/// `w ≤ 0` on biactive nodes, `w` free on inactive nodes, and
/// `⟨Aβ − d, β − v⟩ ≤ 0` for all admissible `v`.
pub fn solve_vi_cone(
    a: &DiscreteOperator,
    d: &DualVector,
    cone: &CriticalConeSpec,
    tol: f64,
) -> Result<StateVector> {
    let n = a.node_count();
    check_len(n, d.len())?;
    cone.validate(n)?;
    let a_shift = a.apply(&cone.shift)?;
    let load: Vec<f64> = d.iter().zip(a_shift.iter()).map(|(x, y)| x - y).collect();

    let mut free: Vec<usize> = cone.biactive.iter().chain(&cone.inactive).copied().collect();
    free.sort_unstable();
    let mut obstacle_full = vec![f64::INFINITY; n];
    for &i in &cone.biactive {
        obstacle_full[i] = 0.0;
    }
    let g: Vec<f64> = free.iter().map(|&i| load[i]).collect();
    let psi: Vec<f64> = free.iter().map(|&i| obstacle_full[i]).collect();
    let sub = submatrix(&a.matrix, &free);
    let th = Thresholds::new(&g, &psi);
    let (w, _, _) = obstacle_core(&sub, &g, &psi, None, tol, &th)?;

    let mut beta = cone.shift.clone();
    for (k, &i) in free.iter().enumerate() {
        beta[i] += w[k];
    }
    Ok(beta)
}
