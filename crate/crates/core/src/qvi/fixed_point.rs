//! Fixed-point routes `y_n = S(f, Φ(y_{n−1}))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{finish, step_record, IterRecord, QviSolution, Route, INNER_VI_TOL, MONOTONE_TOL};
use crate::error::{check_len, Error, Result};
use crate::mesh::DiscreteOperator;
use crate::obstacle::ObstacleMap;
use crate::vector::{dist_inf, norm_inf, order_violation, DualVector, StateVector};
use crate::vi::{residuals_from, solve_vi_upper};

const INCREASING_SAMPLES: usize = 20;
const INCREASING_SEED: u64 = 0x1ac2_ea5e;

fn qvi_residual(a: &DiscreteOperator, f: &[f64], map: &ObstacleMap, y: &[f64]) -> Result<f64> {
    let phi = map.eval(y)?;
    let ay = a.apply(y)?;
    let xi: Vec<f64> = f.iter().zip(ay.iter()).map(|(p, q)| p - q).collect();
    Ok(residuals_from(&xi, &phi, y).max())
}

/// Iterate `y_n = S(f, Φ(y_{n−1}))` from `y0` (default `A⁻¹f`) until
/// `‖y_n − y_{n−1}‖₂ ≤ tol`.
pub fn solve_qvi_iteration(
    a: &DiscreteOperator,
    f: &DualVector,
    map: &ObstacleMap,
    y0: Option<&StateVector>,
    tol: f64,
    max_iter: usize,
) -> Result<QviSolution> {
    let n = a.node_count();
    check_len(n, f.len())?;
    check_len(n, map.node_count())?;
    let mut y = match y0 {
        Some(v) => {
            check_len(n, v.len())?;
            v.clone()
        }
        None => a.solve(f)?,
    };
    let mut history: Vec<IterRecord> = Vec::new();
    let mut prev_step = None;
    for it in 1..=max_iter {
        let psi = map.eval(&y)?;
        let next = solve_vi_upper(a, f, &psi, INNER_VI_TOL)?.y;
        let res = qvi_residual(a, f, map, &next)?;
        let rec = step_record(it, &y, &next, prev_step, res);
        history.push(rec);
        prev_step = Some(rec.step);
        y = next;
        if rec.step <= tol {
            return finish(a, f, map, y, Route::Iteration, history);
        }
    }
    let last = history.last().copied();
    Err(Error::IterationLimit {
        iterations: max_iter,
        last_step: last.map_or(f64::NAN, |r| r.step),
        ratio: last.map_or(f64::NAN, |r| r.ratio),
    })
}

/// Worst violation of `Φ(y₁) ≤ Φ(y₂)` over sampled ordered pairs
/// `y₁ ≤ y₂` between `lower` and `upper`.
pub fn check_increasing_sampled(
    map: &ObstacleMap,
    lower: &[f64],
    upper: &[f64],
    samples: usize,
    seed: u64,
) -> Result<f64> {
    check_len(map.node_count(), lower.len())?;
    check_len(map.node_count(), upper.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let mut y1 = Vec::with_capacity(lower.len());
        let mut y2 = Vec::with_capacity(lower.len());
        for (l, u) in lower.iter().zip(upper) {
            let (lo, hi) = if l <= u { (*l, *u) } else { (*u, *l) };
            let a = lo + (hi - lo) * rng.random::<f64>();
            let b = a + (hi - a) * rng.random::<f64>();
            y1.push(a);
            y2.push(b);
        }
        let p1 = map.eval(&y1)?;
        let p2 = map.eval(&y2)?;
        worst = worst.max(order_violation(&p1, &p2));
    }
    Ok(worst)
}

#[derive(Clone, Copy)]
enum Direction {
    Up,
    Down,
}

fn monotone_run(
    a: &DiscreteOperator,
    f: &DualVector,
    map: &ObstacleMap,
    start: StateVector,
    dir: Direction,
    tol: f64,
    max_iter: usize,
) -> Result<(StateVector, Vec<IterRecord>)> {
    let mut y = start;
    let mut history = Vec::new();
    let mut prev_step = None;
    for it in 1..=max_iter {
        let psi = map.eval(&y)?;
        let next = solve_vi_upper(a, f, &psi, INNER_VI_TOL)?.y;
        let slack = MONOTONE_TOL * (1.0 + norm_inf(&y));
        let bad = match dir {
            Direction::Up => (0..y.len()).find(|&i| next[i] < y[i] - slack),
            Direction::Down => (0..y.len()).find(|&i| next[i] > y[i] + slack),
        };
        if let Some(node) = bad {
            return Err(Error::Monotonicity {
                step: it,
                node,
                violation: (next[node] - y[node]).abs(),
            });
        }
        let res = qvi_residual(a, f, map, &next)?;
        let rec = step_record(it, &y, &next, prev_step, res);
        history.push(rec);
        prev_step = Some(rec.step);
        let change = dist_inf(&y, &next);
        y = next;
        if change <= tol {
            return Ok((y, history));
        }
    }
    let last = history.last().copied();
    Err(Error::IterationLimit {
        iterations: max_iter,
        last_step: last.map_or(f64::NAN, |r| r.step),
        ratio: last.map_or(f64::NAN, |r| r.ratio),
    })
}

/// Minimal and maximal solutions on `[v₀, A⁻¹F]`.
///
/// Requires `Av₀ ≤ f ≤ F`, `v₀ ≤ Φ(v₀)` and an increasing map; the first
/// two are checked directly, the last by sampling unless the map is
/// increasing by construction. Both sequences are checked for
/// monotonicity at every step and the iteration stops on
/// `‖y_n − y_{n−1}‖_∞ ≤ tol`.
pub fn solve_qvi_interval(
    a: &DiscreteOperator,
    f: &DualVector,
    f_upper: &DualVector,
    v0: &StateVector,
    map: &ObstacleMap,
    tol: f64,
    max_iter: usize,
) -> Result<(QviSolution, QviSolution)> {
    let n = a.node_count();
    check_len(n, f.len())?;
    check_len(n, f_upper.len())?;
    check_len(n, v0.len())?;
    check_len(n, map.node_count())?;

    let slack = MONOTONE_TOL * (1.0 + norm_inf(f_upper));
    let av0 = a.apply(v0)?;
    let v = order_violation(&av0, f);
    if v > slack {
        return Err(Error::Hypothesis(format!("A v0 ≤ f fails by {v:e}")));
    }
    let v = order_violation(f, f_upper);
    if v > slack {
        return Err(Error::Hypothesis(format!("f ≤ F fails by {v:e}")));
    }
    let phi0 = map.eval(v0)?;
    let v = order_violation(v0, &phi0);
    if v > MONOTONE_TOL * (1.0 + norm_inf(&phi0)) {
        return Err(Error::Hypothesis(format!("v0 ≤ Φ(v0) fails by {v:e}")));
    }
    let top = a.solve(f_upper)?;
    if !map.is_increasing_by_construction() {
        let v = check_increasing_sampled(map, v0, &top, INCREASING_SAMPLES, INCREASING_SEED)?;
        if v > MONOTONE_TOL {
            return Err(Error::Hypothesis(format!(
                "obstacle map is not increasing on [v0, A⁻¹F]: sampled violation {v:e}"
            )));
        }
    }

    let (ymin, hmin) = monotone_run(a, f, map, v0.clone(), Direction::Up, tol, max_iter)?;
    let (ymax, hmax) = monotone_run(a, f, map, top, Direction::Down, tol, max_iter)?;
    let lo = finish(a, f, map, ymin, Route::IntervalMin, hmin)?;
    let hi = finish(a, f, map, ymax, Route::IntervalMax, hmax)?;
    Ok((lo, hi))
}
