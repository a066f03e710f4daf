use serde_json::json;

use qvi_core::obstacle::ObstacleMap;
use qvi_core::qvi::solve_qvi_iteration;
use qvi_core::sensitivity::{fd_validate, solve_derivative_qvi};
use qvi_core::vi::solve_vi_upper;
use qvi_core::{DualVector, StateVector};

use super::{solution_json, Ctx};
use crate::build;
use crate::config::MultiplicityBlock;
use crate::error::CliError;
use crate::report::{Check, Comparison};

pub(super) fn run(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let block = cfg
        .multiplicity
        .as_ref()
        .ok_or_else(|| CliError::Config("multiplicity-demo needs a `multiplicity` block".into()))?;
    let op = ctx.op.clone();
    let n = op.node_count();
    let tol = ctx.solve_tol;
    let th = ctx.tol;

    let (delta, centers, targets, f, direction, max_iter, example) = match block {
        MultiplicityBlock::Centers {
            delta,
            centers,
            direction,
            max_iter,
        } => {
            let ys: Vec<StateVector> = centers.iter().map(|c| build::state(c, &op)).collect::<Result<_, _>>()?;
            let mut f = vec![f64::NEG_INFINITY; n];
            for y in &ys {
                let ay = op.apply(y)?;
                for (a, v) in f.iter_mut().zip(ay.iter()) {
                    *a = a.max(*v);
                }
            }
            (*delta, ys.clone(), ys, DualVector::new(f), direction, *max_iter, "centers")
        }
        MultiplicityBlock::Obstacles {
            delta,
            obstacles,
            direction,
            max_iter,
        } => {
            let f = build::source(cfg, &op)?;
            let psis: Vec<StateVector> = obstacles.iter().map(|c| build::state(c, &op)).collect::<Result<_, _>>()?;
            let ys: Vec<StateVector> = psis
                .iter()
                .map(|psi| solve_vi_upper(&op, &f, psi, tol).map(|s| s.y))
                .collect::<Result<_, _>>()?;
            (*delta, ys, psis, f, direction, *max_iter, "obstacles")
        }
    };
    ctx.report.info("example", example);
    let weight = op.grid.cell_volume();
    let mut min_sep = f64::INFINITY;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            min_sep = min_sep.min(weight.sqrt() * centers[i].dist(&centers[j])?);
        }
    }
    ctx.check(Check::new("separation.min_distance", min_sep, Comparison::AtLeast, 2.0 * delta));
    let map = ObstacleMap::Cutoff(build::cutoff(delta, centers.clone(), targets, &op)?);
    let d = direction.as_ref().map(|d| build::load(d, &op)).transpose()?;

    let mut solutions = Vec::new();
    let mut derivatives = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        let label = format!("solution_{}", k + 1);
        let sol = solve_qvi_iteration(&op, &f, &map, Some(c), tol, max_iter)?;
        let back = sol.y.sub(c)?.norm_inf();
        ctx.check(Check::at_most(format!("{label}.distance_to_center"), back, th.multiplicity_residual));
        ctx.residual_checks(&label, &sol, th.multiplicity_residual);
        ctx.iteration_history(&label, &sol);
        if let Some(d) = &d {
            let s = solve_derivative_qvi(&op, d, &sol, &map, tol, max_iter, false)?;
            ctx.check(Check::at_most(format!("{label}.derivative_cone"), s.residuals.cone, th.derivative_residual));
            ctx.check(Check::at_most(format!("{label}.derivative_polar"), s.residuals.polar, th.derivative_residual));
            ctx.check(Check::at_most(
                format!("{label}.derivative_orthogonality"),
                s.residuals.orthogonality,
                th.derivative_residual,
            ));
            let fd = fd_validate(&op, &f, &map, d, &sol, &s.alpha, &[1e-1, 1e-2, 1e-3], tol, max_iter)?;
            let worst = fd.ratios.iter().copied().fold(0.0, f64::max);
            ctx.report.record(Check::at_most(format!("{label}.fd_max_ratio"), worst, th.derivative_residual));
            derivatives.push(json!({
                "label": label,
                "alpha": s.alpha.values(),
                "xi_d": s.xi_d.values(),
                "fd_steps": fd.steps,
                "fd_ratios": fd.ratios,
            }));
        }
        solutions.push(solution_json(&label, &sol));
    }
    ctx.results.insert("f".into(), json!(f.values()));
    ctx.results.insert("solutions".into(), json!(solutions));
    ctx.results.insert("derivatives".into(), json!(derivatives));
    Ok(())
}
