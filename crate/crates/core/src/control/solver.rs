use super::adjoint::adjoint;
use super::{assemble_bundle, objective, ControlProblem, StationarityBundle};
use crate::error::{check_len, Error, Result};
use crate::qvi::{solve_penalized, EpsRule, PathFailure, PenaltyFunction};
use crate::vector::{dist2, norm2, DualVector, StateVector};

/// Tolerance for the inner penalized state solves.
pub const STATE_TOL: f64 = 1e-12;
pub const ARMIJO_C: f64 = 1e-4;
pub const PG_MAX_HALVINGS: usize = 40;

/// One projected-gradient iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgRecord {
    pub iteration: usize,
    pub objective: f64,
    /// `‖u − P(u − (νu − p))‖₂` before the step.
    pub stationarity: f64,
    pub step_size: f64,
    pub halvings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcPenalizedResult {
    pub rho: f64,
    pub u: StateVector,
    pub y: StateVector,
    pub p: StateVector,
    /// `m_ρ'(y − Φ(y))`.
    pub slopes: Vec<f64>,
    pub objective: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<PgRecord>,
}

impl OcPenalizedResult {
    /// `(1/ρ) m_ρ' p`, nodewise.
    pub fn lambda_path(&self) -> DualVector {
        DualVector::new(
            self.slopes
                .iter()
                .zip(self.p.iter())
                .map(|(m, p)| m * p / self.rho)
                .collect(),
        )
    }
}

struct Eval {
    y: StateVector,
    p: StateVector,
    slopes: Vec<f64>,
    objective: f64,
}

fn evaluate(
    problem: &ControlProblem,
    rho: f64,
    pf: &PenaltyFunction,
    u: &StateVector,
    warm: Option<&StateVector>,
) -> Result<Eval> {
    let f = u.to_dual();
    let (y, _) = solve_penalized(&problem.a, &f, &problem.map, rho, pf, STATE_TOL, warm)?;
    let (p, slopes) = adjoint(&problem.a, &problem.map, rho, pf, &y, &problem.y_d, None)?;
    let objective = objective(problem, &y, u)?;
    Ok(Eval {
        y,
        p,
        slopes,
        objective,
    })
}

fn gradient(problem: &ControlProblem, u: &[f64], p: &[f64]) -> Vec<f64> {
    u.iter().zip(p).map(|(u, p)| problem.nu * u - p).collect()
}

fn stationarity(problem: &ControlProblem, u: &StateVector, g: &[f64]) -> f64 {
    let trial: Vec<f64> = u.iter().zip(g).map(|(u, g)| u - g).collect();
    dist2(u, &problem.project(&trial))
}

/// Barzilai-Borwein step `(s, s)/(s, Δg)`.
fn bb_step(u: &[f64], g: &[f64], pu: &[f64], pg: &[f64]) -> Option<f64> {
    let mut ss = 0.0;
    let mut sy = 0.0;
    for i in 0..u.len() {
        let s = u[i] - pu[i];
        ss += s * s;
        sy += s * (g[i] - pg[i]);
    }
    (sy > 0.0 && ss > 0.0).then(|| ss / sy)
}

/// Reduced objective `J(S_ρ(u), u)` and its H-gradient `νu − p`.
pub fn reduced_objective_and_gradient(
    problem: &ControlProblem,
    rho: f64,
    pf: &PenaltyFunction,
    u: &StateVector,
) -> Result<(f64, StateVector)> {
    check_len(problem.node_count(), u.len())?;
    let e = evaluate(problem, rho, pf, u, None)?;
    Ok((e.objective, StateVector::new(gradient(problem, u, &e.p))))
}

/// Projected gradient with Armijo backtracking on the penalized reduced
/// objective; trial steps start from the Barzilai-Borwein length. Stops when `‖u − P(u − (νu − p))‖₂ ≤ tol`; running out of
/// iterations returns `converged = false`.
pub fn solve_oc_penalized(
    problem: &ControlProblem,
    rho: f64,
    pf: &PenaltyFunction,
    u0: &StateVector,
    y0: Option<&StateVector>,
    tol: f64,
    max_iter: usize,
) -> Result<OcPenalizedResult> {
    check_len(problem.node_count(), u0.len())?;
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidInput(format!("rho must be positive, got {rho}")));
    }
    let c_a = problem.a.c_a;
    let tau0 = 1.0 / (problem.nu + 1.0 / (c_a * c_a));
    let mut u = problem.project(u0);
    let mut cur = evaluate(problem, rho, pf, &u, y0)?;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut stat;
    let mut prev: Option<(StateVector, Vec<f64>)> = None;
    loop {
        let g = gradient(problem, &u, &cur.p);
        stat = stationarity(problem, &u, &g);
        if stat <= tol {
            converged = true;
            break;
        }
        if iterations == max_iter {
            break;
        }
        iterations += 1;
        let slack = 64.0 * f64::EPSILON * (1.0 + cur.objective.abs());
        let mut tau = match &prev {
            Some((pu, pg)) => bb_step(&u, &g, pu, pg).map_or(tau0, |t| t.clamp(1e-3 * tau0, 1e3 * tau0)),
            None => tau0,
        };
        let mut accepted = None;
        for k in 0..=PG_MAX_HALVINGS {
            let trial: Vec<f64> = u.iter().zip(&g).map(|(u, g)| u - tau * g).collect();
            let trial = problem.project(&trial);
            let step: Vec<f64> = trial.iter().zip(u.iter()).map(|(a, b)| a - b).collect();
            let decrease = problem.inner(&g, &step);
            let e = evaluate(problem, rho, pf, &trial, Some(&cur.y))?;
            if e.objective <= cur.objective + ARMIJO_C * decrease + slack {
                accepted = Some((trial, e, k));
                break;
            }
            tau *= 0.5;
        }
        let Some((trial, e, halvings)) = accepted else {
            return Err(Error::LineSearch {
                halvings: PG_MAX_HALVINGS,
            });
        };
        history.push(PgRecord {
            iteration: iterations,
            objective: cur.objective,
            stationarity: stat,
            step_size: tau,
            halvings,
        });
        prev = Some((u, g));
        u = trial;
        cur = e;
    }
    Ok(OcPenalizedResult {
        rho,
        u,
        y: cur.y,
        p: cur.p,
        slopes: cur.slopes,
        objective: cur.objective,
        stationarity: stat,
        iterations,
        converged,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcPathRecord {
    pub rho: f64,
    pub epsilon: f64,
    pub objective: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `‖u_ρ − u_ρ'‖₂` to the previous entry; NaN for the first.
    pub drift: f64,
    /// `‖(y_ρ − Φ(y_ρ))⁺‖₂`.
    pub violation: f64,
    /// `‖u_ρ − P(p_ρ/ν)‖_∞`.
    pub projection_identity: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OcPathReport {
    pub records: Vec<OcPathRecord>,
    pub failure: Option<PathFailure>,
}

impl OcPathReport {
    pub fn drifts(&self) -> Vec<f64> {
        self.records.iter().skip(1).map(|r| r.drift).collect()
    }
}

/// Warm-started penalized control solves along `schedule`; the bundle is
/// assembled from the last successful `ρ`.
pub fn oc_path(
    problem: &ControlProblem,
    schedule: &[f64],
    eps_rule: EpsRule,
    u0: &StateVector,
    tol: f64,
    max_iter: usize,
) -> Result<(StationarityBundle, OcPathReport)> {
    crate::qvi::validate_schedule(schedule)?;
    let mut report = OcPathReport::default();
    let mut last: Option<OcPenalizedResult> = None;
    for &rho in schedule {
        let pf = eps_rule.penalty(rho)?;
        let start_u = last.as_ref().map_or(u0, |r| &r.u);
        let start_y = last.as_ref().map(|r| &r.y);
        match solve_oc_penalized(problem, rho, &pf, start_u, start_y, tol, max_iter) {
            Ok(res) => {
                let phi = problem.map.eval(&res.y)?;
                let pos: Vec<f64> = res.y.iter().zip(phi.iter()).map(|(v, p)| (v - p).max(0.0)).collect();
                let target: Vec<f64> = res.p.iter().map(|p| p / problem.nu).collect();
                let proj = problem.project(&target);
                let identity = res
                    .u
                    .iter()
                    .zip(proj.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                report.records.push(OcPathRecord {
                    rho,
                    epsilon: pf.epsilon,
                    objective: res.objective,
                    stationarity: res.stationarity,
                    iterations: res.iterations,
                    converged: res.converged,
                    drift: last.as_ref().map_or(f64::NAN, |l| dist2(&l.u, &res.u)),
                    violation: norm2(&pos),
                    projection_identity: identity,
                });
                last = Some(res);
            }
            Err(e) => {
                if last.is_none() {
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
    let res = last.expect("at least one successful solve");
    let lambda_path = res.lambda_path();
    let bundle = assemble_bundle(problem, res.y, res.u, res.p, lambda_path, res.rho)?;
    Ok((bundle, report))
}

/// Run `oc_path` from each start concurrently. Returns all outcomes and the
/// index of the successful run with the lowest objective.
#[allow(clippy::type_complexity)]
pub fn oc_multistart(
    problem: &ControlProblem,
    schedule: &[f64],
    eps_rule: EpsRule,
    starts: &[StateVector],
    tol: f64,
    max_iter: usize,
) -> (Vec<Result<(StationarityBundle, OcPathReport)>>, Option<usize>) {
    let runs: Vec<Result<(StationarityBundle, OcPathReport)>> = std::thread::scope(|s| {
        let handles: Vec<_> = starts
            .iter()
            .map(|u0| s.spawn(move || oc_path(problem, schedule, eps_rule, u0, tol, max_iter)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("multistart worker panicked"))
            .collect()
    });
    let best = runs
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let (b, _) = r.as_ref().ok()?;
            objective(problem, &b.y, &b.u).ok().map(|j| (i, j))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    (runs, best)
}
