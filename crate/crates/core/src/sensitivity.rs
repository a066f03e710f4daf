//! Directional derivative `α(d)` of the QVI solution map and its
//! finite-difference validation.

use crate::error::{check_len, Error, Result};
use crate::mesh::DiscreteOperator;
use crate::obstacle::ObstacleMap;
use crate::qvi::{solve_qvi_iteration, QviSolution};
use crate::vector::{dist2, dot, DualVector, StateVector};
use crate::vi::{solve_vi_cone, ActiveSets, CriticalConeSpec};

/// Inner cone-VI tolerance; the inner solves are exact up to roundoff.
const CONE_VI_TOL: f64 = 1e-12;

/// Residuals of the derivative complementarity system.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DerivativeResiduals {
    /// `v = α − Φ'(y)(α)`: `max |v_i|` on strongly active nodes and
    /// `max v_i⁺` on biactive nodes.
    pub cone: f64,
    /// `ξ_d = d − Aα`: `max |ξ_d,i|` on inactive nodes and `max (−ξ_d,i)⁺`
    /// on biactive nodes.
    pub polar: f64,
    /// `|⟨ξ_d, Φ'(y)(α) − α⟩|`.
    pub orthogonality: f64,
}

impl DerivativeResiduals {
    pub fn max(&self) -> f64 {
        self.cone.max(self.polar).max(self.orthogonality)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    pub alpha: StateVector,
    /// Cone with `shift = Φ'(y)(α)`.
    pub cone: CriticalConeSpec,
    pub xi_d: DualVector,
    pub iterations: usize,
    /// Largest observed `‖α_{n+1} − α_n‖ / ‖α_n − α_{n−1}‖` (NaN if fewer
    /// than two steps were taken).
    pub contraction_ratio: f64,
    /// Operator norm of `Φ'(y)` used for the solvability check.
    pub c_l: f64,
    pub residuals: DerivativeResiduals,
}

/// Node sets of `sol` as a cone with zero shift.
pub fn build_critical_cone(sol: &QviSolution) -> CriticalConeSpec {
    CriticalConeSpec::from_sets(&sol.sets, sol.y.len())
}

pub fn derivative_residuals(
    a: &DiscreteOperator,
    d: &DualVector,
    sets: &ActiveSets,
    map: &ObstacleMap,
    y: &StateVector,
    alpha: &StateVector,
) -> Result<DerivativeResiduals> {
    check_len(a.node_count(), d.len())?;
    check_len(a.node_count(), alpha.len())?;
    let shift = map.deriv(y, alpha)?;
    let v: Vec<f64> = alpha.iter().zip(shift.iter()).map(|(a, s)| a - s).collect();
    let a_alpha = a.apply(alpha)?;
    let xi_d: Vec<f64> = d.iter().zip(a_alpha.iter()).map(|(p, q)| p - q).collect();
    let mut r = DerivativeResiduals::default();
    for &i in &sets.strongly_active {
        r.cone = r.cone.max(v[i].abs());
    }
    for &i in &sets.biactive {
        r.cone = r.cone.max(v[i]);
        r.polar = r.polar.max(-xi_d[i]);
    }
    for &i in &sets.inactive {
        r.polar = r.polar.max(xi_d[i].abs());
    }
    r.orthogonality = dot(&xi_d, &v).abs();
    Ok(r)
}

/// Solve the derivative QVI by the fixed-point iteration
/// `α_n = Φ'(y)(α_{n−1}) + w_n`, each `w_n` from a cone VI on the frozen
/// node sets of `sol`.
///
/// Unless `force` is set, `‖Φ'(y)‖ < c_a/c_b` is required.
pub fn solve_derivative_qvi(
    a: &DiscreteOperator,
    d: &DualVector,
    sol: &QviSolution,
    map: &ObstacleMap,
    tol: f64,
    max_iter: usize,
    force: bool,
) -> Result<Sensitivity> {
    let n = a.node_count();
    check_len(n, d.len())?;
    check_len(n, sol.y.len())?;
    let c_l = map.derivative_norm(&sol.y)?;
    let bound = a.c_a / a.c_b;
    if !force && c_l >= bound {
        return Err(Error::Certificate { value: c_l, bound });
    }
    let mut cone = build_critical_cone(sol);
    let mut alpha = StateVector::zeros(n);
    let mut prev_shift: Option<StateVector> = None;
    let mut prev_step: Option<f64> = None;
    let mut worst_ratio = f64::NAN;
    let mut solves = 0;
    for _ in 0..max_iter {
        let shift = map.deriv(&sol.y, &alpha)?;
        if prev_shift.as_ref() == Some(&shift) {
            break;
        }
        cone.shift = shift.clone();
        let next = solve_vi_cone(a, d, &cone, CONE_VI_TOL)?;
        solves += 1;
        let step = dist2(&next, &alpha);
        if let Some(p) = prev_step {
            if p > 0.0 {
                let r = step / p;
                worst_ratio = if worst_ratio.is_nan() { r } else { worst_ratio.max(r) };
            }
        }
        prev_step = Some(step);
        prev_shift = Some(shift);
        alpha = next;
        if step <= tol {
            break;
        }
    }
    if solves == max_iter && prev_step.is_none_or(|s| s > tol) {
        return Err(Error::IterationLimit {
            iterations: max_iter,
            last_step: prev_step.unwrap_or(f64::NAN),
            ratio: worst_ratio,
        });
    }
    cone.shift = map.deriv(&sol.y, &alpha)?;
    let a_alpha = a.apply(&alpha)?;
    let xi_d = DualVector::new(d.iter().zip(a_alpha.iter()).map(|(p, q)| p - q).collect());
    let residuals = derivative_residuals(a, d, &sol.sets, map, &sol.y, &alpha)?;
    Ok(Sensitivity {
        alpha,
        cone,
        xi_d,
        iterations: solves,
        contraction_ratio: worst_ratio,
        c_l,
        residuals,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub steps: Vec<f64>,
    /// `‖(y^s − y)/s − α‖₂` per step; NaN where the perturbed solve failed.
    pub ratios: Vec<f64>,
    /// Least-squares slope of `log ratio` against `log s` over finite,
    /// positive ratios (NaN if fewer than two).
    pub slope: f64,
    /// `max_s ‖y^s − y‖₂`.
    pub max_displacement: f64,
    pub failures: Vec<(f64, String)>,
}

impl FdReport {
    pub fn strictly_decreasing(&self) -> bool {
        self.failures.is_empty() && self.ratios.windows(2).all(|w| w[1] < w[0])
    }
}

/// Compare `(y^s − y)/s` with `α` for each `s`, where `y^s` is the QVI
/// iteration for `f + s d` warm-started at `y`. Steps run on separate
/// threads.
#[allow(clippy::too_many_arguments)]
pub fn fd_validate(
    a: &DiscreteOperator,
    f: &DualVector,
    map: &ObstacleMap,
    d: &DualVector,
    sol: &QviSolution,
    alpha: &StateVector,
    s_list: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<FdReport> {
    let n = a.node_count();
    check_len(n, f.len())?;
    check_len(n, d.len())?;
    check_len(n, alpha.len())?;
    if s_list.is_empty()
        || s_list.iter().any(|s| !(*s > 0.0))
        || s_list.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::InvalidInput(
            "step sizes must be positive and strictly decreasing".into(),
        ));
    }
    let outcomes: Vec<Result<StateVector>> = std::thread::scope(|scope| {
        let handles: Vec<_> = s_list
            .iter()
            .map(|&s| {
                scope.spawn(move || {
                    let fs = f.add_scaled(s, d)?;
                    solve_qvi_iteration(a, &fs, map, Some(&sol.y), tol, max_iter).map(|q| q.y)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("fd worker panicked"))
            .collect()
    });
    let mut ratios = Vec::with_capacity(s_list.len());
    let mut failures = Vec::new();
    let mut max_displacement: f64 = 0.0;
    for (s, out) in s_list.iter().zip(outcomes) {
        match out {
            Ok(ys) => {
                max_displacement = max_displacement.max(dist2(&ys, &sol.y));
                let r: f64 = ys
                    .iter()
                    .zip(sol.y.iter())
                    .zip(alpha.iter())
                    .map(|((p, q), al)| {
                        let e = (p - q) / s - al;
                        e * e
                    })
                    .sum::<f64>()
                    .sqrt();
                ratios.push(r);
            }
            Err(e) => {
                ratios.push(f64::NAN);
                failures.push((*s, e.to_string()));
            }
        }
    }
    let slope = loglog_slope(s_list, &ratios);
    Ok(FdReport {
        steps: s_list.to_vec(),
        ratios,
        slope,
        max_displacement,
        failures,
    })
}

fn loglog_slope(s: &[f64], r: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = s
        .iter()
        .zip(r)
        .filter(|(_, r)| r.is_finite() && **r > 0.0)
        .map(|(s, r)| (s.ln(), r.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

/// Pairwise check of `‖α(d_i) − α(d_j)‖ ≤ K ‖d_i − d_j‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCheck {
    pub i: usize,
    pub j: usize,
    pub alpha_distance: f64,
    pub direction_distance: f64,
    pub bound: f64,
}

impl PairCheck {
    pub fn holds(&self) -> bool {
        self.alpha_distance <= self.bound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityReport {
    /// `2 (1 + C_L) / (c_a − c_b C_L)`.
    pub constant: f64,
    pub c_l: f64,
    pub pairs: Vec<PairCheck>,
}

impl ContinuityReport {
    pub fn pass(&self) -> bool {
        self.pairs.iter().all(PairCheck::holds)
    }
}

/// Lipschitz constant of `d ↦ α(d)` with the ×2 allowance.
pub fn continuity_constant(c_a: f64, c_b: f64, c_l: f64) -> f64 {
    2.0 * (1.0 + c_l) / (c_a - c_b * c_l)
}

pub fn derivative_direction_continuity(
    a: &DiscreteOperator,
    sol: &QviSolution,
    map: &ObstacleMap,
    d_list: &[DualVector],
    tol: f64,
    max_iter: usize,
) -> Result<ContinuityReport> {
    if d_list.len() < 2 {
        return Err(Error::InvalidInput("need at least two directions".into()));
    }
    let mut alphas = Vec::with_capacity(d_list.len());
    let mut c_l = 0.0;
    for d in d_list {
        let s = solve_derivative_qvi(a, d, sol, map, tol, max_iter, false)?;
        c_l = s.c_l;
        alphas.push(s.alpha);
    }
    let constant = continuity_constant(a.c_a, a.c_b, c_l);
    let mut pairs = Vec::new();
    for i in 0..d_list.len() {
        for j in i + 1..d_list.len() {
            let dd = dist2(&d_list[i], &d_list[j]);
            pairs.push(PairCheck {
                i,
                j,
                alpha_distance: dist2(&alphas[i], &alphas[j]),
                direction_distance: dd,
                bound: constant * dd,
            });
        }
    }
    Ok(ContinuityReport {
        constant,
        c_l,
        pairs,
    })
}
