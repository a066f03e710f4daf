use serde_json::json;

use qvi_core::qvi::solve_qvi_iteration;
use qvi_core::sensitivity::{derivative_direction_continuity, fd_validate, solve_derivative_qvi};
use qvi_core::DualVector;

use super::{sets_json, solution_json, Ctx};
use crate::build;
use crate::error::CliError;
use crate::report::{Check, Comparison};

const STREAM_DIRECTIONS: u64 = 2;

pub(super) fn run(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let block = cfg
        .sensitivity
        .as_ref()
        .ok_or_else(|| CliError::Config("sensitivity needs a `sensitivity` block".into()))?;
    let op = ctx.op.clone();
    let map = build::obstacle(cfg, &op)?;
    let f = build::source(cfg, &op)?;
    let d = build::load(&block.direction, &op)?;
    let tol = ctx.solve_tol;
    let th = ctx.tol;
    let y0 = cfg
        .qvi
        .as_ref()
        .and_then(|q| q.y0.as_ref())
        .map(|f| build::state(f, &op))
        .transpose()?;
    let sol = solve_qvi_iteration(&op, &f, &map, y0.as_ref(), tol, block.max_iter)?;
    ctx.residual_checks("base", &sol, th.qvi_residual);
    ctx.iteration_history("base", &sol);

    let s = solve_derivative_qvi(&op, &d, &sol, &map, tol, block.max_iter, false)?;
    ctx.check(Check::at_most("derivative.cone", s.residuals.cone, th.derivative_residual));
    ctx.check(Check::at_most("derivative.polar", s.residuals.polar, th.derivative_residual));
    ctx.check(Check::at_most(
        "derivative.orthogonality",
        s.residuals.orthogonality,
        th.derivative_residual,
    ));
    ctx.report.info("derivative_iterations", s.iterations);
    ctx.report.info("derivative_contraction_ratio", s.contraction_ratio);
    ctx.report.info("c_l", s.c_l);

    let fd = fd_validate(&op, &f, &map, &d, &sol, &s.alpha, &block.steps, tol, block.max_iter)?;
    let rise = if fd.failures.is_empty() {
        fd.ratios.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    } else {
        f64::NAN
    };
    if fd.ratios.len() > 1 {
        ctx.check(Check::new("fd.ratio_rise", rise, Comparison::Below, 0.0));
    }
    ctx.report.info("fd_slope", fd.slope);
    ctx.report.info("fd_failures", &fd.failures);
    for (k, (st, r)) in fd.steps.iter().zip(&fd.ratios).enumerate() {
        ctx.history.push("fd", k + 1, "step", *st);
        ctx.history.push("fd", k + 1, "ratio", *r);
    }

    let d2 = DualVector::new(d.iter().map(|v| 2.0 * v).collect());
    let s2 = solve_derivative_qvi(&op, &d2, &sol, &map, tol, block.max_iter, false)?;
    let h = s2.alpha.dist(&s.alpha.scaled(2.0))?;
    ctx.check(Check::at_most("derivative.homogeneity", h, th.homogeneity));

    if block.continuity_directions >= 2 {
        let mut rng = ctx.rng(STREAM_DIRECTIONS);
        let scale = d.norm_inf().max(1.0);
        let dirs: Vec<DualVector> = (0..block.continuity_directions)
            .map(|_| ctx.random_field(&mut rng, scale).to_dual())
            .collect();
        let c = derivative_direction_continuity(&op, &sol, &map, &dirs, tol, block.max_iter)?;
        let worst = c
            .pairs
            .iter()
            .map(|p| p.alpha_distance / p.bound)
            .fold(0.0, f64::max);
        ctx.check(Check::at_most("continuity.bound_ratio", worst, 1.0));
        ctx.report.info("continuity_constant", c.constant);
        ctx.report.info("continuity_pairs", c.pairs.len());
    }

    ctx.results.insert("solution".into(), solution_json("base", &sol));
    ctx.results.insert(
        "derivative".into(),
        json!({
            "direction": d.values(),
            "alpha": s.alpha.values(),
            "xi_d": s.xi_d.values(),
            "cone": {
                "strongly_active": s.cone.strongly_active,
                "biactive": s.cone.biactive,
                "inactive": s.cone.inactive,
                "shift": s.cone.shift.values(),
            },
            "sets": sets_json(&sol.sets),
            "fd_steps": fd.steps,
            "fd_ratios": fd.ratios,
        }),
    );
    Ok(())
}
