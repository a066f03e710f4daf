use rand::Rng;
use serde_json::json;

use qvi_core::qvi::{penalty_path, solve_qvi_interval, solve_qvi_iteration, QviSolution};
use qvi_core::vector::order_violation;
use qvi_core::StateVector;

use super::{solution_json, Ctx};
use crate::build;
use crate::config::RouteConfig;
use crate::error::CliError;
use crate::report::{Check, Comparison};

const STREAM_INSIDE: u64 = 1;

pub(super) fn run(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let block = cfg
        .qvi
        .as_ref()
        .ok_or_else(|| CliError::Config("qvi-solve needs a `qvi` block".into()))?;
    let op = ctx.op.clone();
    let map = build::obstacle(cfg, &op)?;
    let f = build::source(cfg, &op)?;
    let tol = ctx.solve_tol;
    let th = ctx.tol;
    ctx.results.insert("f".into(), json!(f.values()));
    ctx.report.info("map_kind", map.kind().name());
    let mut solutions = Vec::new();
    let mut iteration: Option<QviSolution> = None;

    if block.routes.contains(&RouteConfig::Iteration) {
        let y0 = block.y0.as_ref().map(|f| build::state(f, &op)).transpose()?;
        let sol = solve_qvi_iteration(&op, &f, &map, y0.as_ref(), tol, block.max_iter)?;
        ctx.residual_checks("iteration", &sol, th.qvi_residual);
        if y0.is_none() && map.is_increasing_by_construction() {
            let inc = sol.history.iter().map(|r| r.max_increase).fold(0.0, f64::max);
            ctx.check(Check::at_most("iteration.monotone_increase", inc, th.monotone));
        }
        ctx.report.info("iteration_steps", sol.history.len());
        ctx.iteration_history("iteration", &sol);
        solutions.push(solution_json("iteration", &sol));
        iteration = Some(sol);
    }

    if block.routes.contains(&RouteConfig::Interval) {
        let icfg = block.interval.clone().unwrap_or(crate::config::IntervalConfig {
            f_upper: None,
            v0: None,
            inside_samples: 5,
        });
        let f_upper = match &icfg.f_upper {
            Some(s) => build::load(s, &op)?,
            None => f.clone(),
        };
        let v0 = match &icfg.v0 {
            Some(s) => build::state(s, &op)?,
            None => StateVector::zeros(op.node_count()),
        };
        let (lo, hi) = solve_qvi_interval(&op, &f, &f_upper, &v0, &map, tol, block.max_iter)?;
        ctx.residual_checks("interval_min", &lo, th.qvi_residual);
        ctx.residual_checks("interval_max", &hi, th.qvi_residual);
        ctx.check(Check::at_most("interval.order", order_violation(&lo.y, &hi.y), th.bracket));
        let top = op.solve(&f_upper)?;
        let mut rng = ctx.rng(STREAM_INSIDE);
        let mut worst: f64 = 0.0;
        for _ in 0..icfg.inside_samples {
            let start = StateVector::new(
                v0.iter()
                    .zip(top.iter())
                    .map(|(a, b)| a + rng.random::<f64>() * (b - a))
                    .collect(),
            );
            let s = solve_qvi_iteration(&op, &f, &map, Some(&start), tol, block.max_iter)?;
            worst = worst
                .max(order_violation(&lo.y, &s.y))
                .max(order_violation(&s.y, &hi.y));
        }
        if icfg.inside_samples > 0 {
            ctx.check(Check::at_most("interval.bracket", worst, th.bracket));
        }
        if let Some(it) = &iteration {
            let v = order_violation(&lo.y, &it.y).max(order_violation(&it.y, &hi.y));
            ctx.check(Check::at_most("interval.bracket_iteration", v, th.bracket));
        }
        ctx.iteration_history("interval_min", &lo);
        ctx.iteration_history("interval_max", &hi);
        solutions.push(solution_json("interval_min", &lo));
        solutions.push(solution_json("interval_max", &hi));
    }

    if block.routes.contains(&RouteConfig::Penalty) {
        let schedule = build::schedule(&block.schedule);
        let (sol, path) = penalty_path(&op, &f, &map, &schedule, build::eps_rule(block.eps_rule), tol)?;
        if let Some(fail) = &path.failure {
            ctx.report.info("penalty_failure", json!({"rho": fail.rho, "message": fail.message}));
        }
        ctx.residual_checks("penalty", &sol, th.qvi_residual);
        let v = path.violations();
        if v.len() > 1 {
            let rise = v.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            ctx.check(Check::new("penalty.violation_rise", rise, Comparison::Below, 0.0));
        }
        let reference = block
            .reference_rho
            .or_else(|| path.at(1e-6).map(|_| 1e-6));
        if let (Some(r), Some(it)) = (reference, &iteration) {
            match path.at(r) {
                Some(e) => {
                    let d = e.y.dist(&it.y)?;
                    ctx.check(Check::at_most("penalty.reference_distance", d, th.penalty_reference));
                }
                None => {
                    return Err(CliError::Config(format!(
                        "reference_rho {r} is not on the completed penalty schedule"
                    )))
                }
            }
        }
        for (k, e) in path.entries.iter().enumerate() {
            ctx.history.push("penalty", k + 1, "rho", e.rho);
            ctx.history.push("penalty", k + 1, "epsilon", e.epsilon);
            ctx.history.push("penalty", k + 1, "newton_iterations", e.newton_iterations as f64);
            ctx.history.push("penalty", k + 1, "newton_residual", e.residual);
            ctx.history.push("penalty", k + 1, "violation", e.violation);
        }
        solutions.push(solution_json("penalty", &sol));
    }
    ctx.results.insert("solutions".into(), json!(solutions));
    Ok(())
}
