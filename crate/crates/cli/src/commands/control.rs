use serde_json::json;

use qvi_core::control::{
    assemble_bundle, check_b_stationarity, check_stationarity, lq_oracle, oc_multistart,
    reduced_gradient_check, ControlProblem, StationarityBundle, StationarityClass,
    StationarityOptions, StationarityReport,
};
use qvi_core::qvi::penalty_path;
use qvi_core::{DualVector, StateVector};

use super::{sets_json, Ctx};
use crate::build;
use crate::error::CliError;
use crate::report::{Check, Comparison};

const STREAM_STARTS: u64 = 3;
const STREAM_DIRECTIONS: u64 = 4;
const STREAM_GRADIENT: u64 = 5;

pub(super) fn run(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let block = cfg
        .control
        .as_ref()
        .ok_or_else(|| CliError::Config("control needs a `control` block".into()))?;
    let op = ctx.op.clone();
    let n = op.node_count();
    let map = build::obstacle(cfg, &op)?;
    let grid = op.grid;
    let u_a = match &block.u_a {
        Some(f) => f.evaluate_bound(&grid, f64::NEG_INFINITY)?,
        None => vec![f64::NEG_INFINITY; n],
    };
    let u_b = match &block.u_b {
        Some(f) => f.evaluate_bound(&grid, f64::INFINITY)?,
        None => vec![f64::INFINITY; n],
    };
    let problem = ControlProblem::new(
        op.clone(),
        map,
        build::state(&block.y_d, &op)?,
        block.nu,
        StateVector::new(u_a),
        StateVector::new(u_b),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let th = ctx.tol;
    let tol = ctx.solve_tol;
    let schedule = build::schedule(&block.schedule);
    let eps_rule = build::eps_rule(block.eps_rule);

    let u0 = match &block.u0 {
        Some(f) => build::state(f, &op)?,
        None => StateVector::zeros(n),
    };
    let mut starts = vec![u0.clone()];
    let mut rng = ctx.rng(STREAM_STARTS);
    let scale = u0.norm_inf().max(1.0);
    for _ in 0..block.multistart {
        starts.push(ctx.random_field(&mut rng, scale));
    }
    let (runs, best) = oc_multistart(&problem, &schedule, eps_rule, &starts, tol, block.max_iter);
    let Some(best) = best else {
        let msg = runs
            .into_iter()
            .find_map(|r| r.err())
            .map_or_else(|| "no start succeeded".to_string(), |e| e.to_string());
        return Err(CliError::Solver(msg));
    };
    let objectives: Vec<Option<f64>> = runs
        .iter()
        .map(|r| r.as_ref().ok().and_then(|(b, _)| qvi_core::control::objective(&problem, &b.y, &b.u).ok()))
        .collect();
    ctx.report.info("multistart_objectives", &objectives);
    ctx.report.info("best_start", best);
    let (bundle, path) = runs.into_iter().nth(best).expect("index in range").expect("best run succeeded");
    if let Some(fail) = &path.failure {
        ctx.report.info("path_failure", json!({"rho": fail.rho, "message": fail.message}));
    }
    if let Some(last) = path.records.last() {
        ctx.check(Check::new("path.final_converged", f64::from(u8::from(last.converged)), Comparison::AtLeast, 1.0));
    }
    ctx.report.info("objective", qvi_core::control::objective(&problem, &bundle.y, &bundle.u)?);
    ctx.report.info("lambda_path_gap", bundle.lambda_gap);
    ctx.report.info("final_rho", bundle.rho);
    for (k, r) in path.records.iter().enumerate() {
        let i = k + 1;
        ctx.history.push("path", i, "rho", r.rho);
        ctx.history.push("path", i, "objective", r.objective);
        ctx.history.push("path", i, "stationarity", r.stationarity);
        ctx.history.push("path", i, "pg_iterations", r.iterations as f64);
        ctx.history.push("path", i, "drift", r.drift);
        ctx.history.push("path", i, "violation", r.violation);
        ctx.history.push("path", i, "projection_identity", r.projection_identity);
    }

    let options = StationarityOptions {
        tol: th.stationarity,
        tau: block.tau,
        seed: ctx.seed,
        derivative_tol: tol,
        ..StationarityOptions::default()
    };
    let weak = check_stationarity(&problem, &bundle, StationarityClass::WeakC, &options)?;
    add_class(ctx, &weak, true);
    let mut exceptional = Vec::new();
    for class in [StationarityClass::EAlmostC, StationarityClass::C, StationarityClass::Strong] {
        let r = check_stationarity(&problem, &bundle, class, &options)?;
        add_class(ctx, &r, false);
        if class == StationarityClass::EAlmostC {
            exceptional = r.exceptional_nodes.clone();
        }
    }

    let mut drng = ctx.rng(STREAM_DIRECTIONS);
    let directions: Vec<StateVector> = (0..block.b_directions)
        .map(|_| ctx.random_field(&mut drng, 1.0))
        .collect();
    let b = check_b_stationarity(&problem, &bundle, &directions, &options)?;
    add_class(ctx, &b, true);
    ctx.report.info("b_direction_failures", &b.failures);
    let b_min = b.values.iter().copied().fold(f64::INFINITY, f64::min);
    ctx.report.info("b_min_value", b_min);

    if let Some(delta) = block.perturbation {
        let shifted: Vec<f64> = bundle.u.iter().map(|u| u + delta).collect();
        let u_p = problem.project(&shifted);
        let (state, _) = penalty_path(&op, &u_p.to_dual(), &problem.map, &schedule, eps_rule, tol)?;
        let pb = assemble_bundle(
            &problem,
            state.y,
            u_p,
            StateVector::zeros(n),
            DualVector::zeros(n),
            bundle.rho,
        )?;
        let bp = check_b_stationarity(&problem, &pb, &directions, &options)?;
        let v = bp.residual("b_inequality").unwrap_or(f64::NAN);
        ctx.check(Check::new("b_perturbed.b_inequality", v, Comparison::Above, th.stationarity));
    }

    let mut grng_seed = ctx.rng(STREAM_GRADIENT);
    let gseed: u64 = rand::Rng::random(&mut grng_seed);
    for (k, &rho) in block.gradient_rhos.iter().enumerate() {
        let pf = eps_rule.penalty(rho)?;
        let probes = reduced_gradient_check(
            &problem,
            rho,
            &pf,
            &u0,
            block.gradient_amplitude,
            block.gradient_points,
            gseed.wrapping_add(k as u64),
        )?;
        let worst = probes.iter().map(|p| p.relative_error).fold(0.0, f64::max);
        ctx.check(Check::at_most(format!("gradient.rho_{rho:e}"), worst, th.gradient));
    }

    if block.lq_oracle {
        let (u_o, y_o) = lq_oracle(&problem)?;
        ctx.check(Check::at_most("lq.u_distance", bundle.u.sub(&u_o)?.norm_inf(), th.lq));
        ctx.check(Check::at_most("lq.y_distance", bundle.y.sub(&y_o)?.norm_inf(), th.lq));
        ctx.check(Check::at_most("lq.lambda", bundle.lambda.norm_inf(), th.lq));
        ctx.check(Check::at_most("lq.xi", bundle.xi.norm_inf(), th.lq));
    }

    ctx.results.insert("bundle".into(), bundle_json(&bundle, &exceptional));
    Ok(())
}

fn add_class(ctx: &mut Ctx, r: &StationarityReport, asserted: bool) {
    for c in &r.residuals {
        let check = Check::at_most(format!("{}.{}", r.class.name(), c.name), c.value, c.threshold);
        if asserted {
            ctx.check(check);
        } else {
            ctx.report.record(check);
        }
    }
    for (name, v) in &r.informational {
        ctx.report.info(&format!("{}.{}", r.class.name(), name), v);
    }
}

fn bundle_json(b: &StationarityBundle, exceptional: &[usize]) -> serde_json::Value {
    json!({
        "y": b.y.values(),
        "u": b.u.values(),
        "p": b.p.values(),
        "lambda": b.lambda.values(),
        "lambda_path": b.lambda_path.values(),
        "xi": b.xi.values(),
        "mu": b.mu.values(),
        "obstacle": b.state.obstacle.values(),
        "sets": sets_json(&b.state.sets),
        "control_at_lower": b.control_sets.at_lower,
        "control_at_upper": b.control_sets.at_upper,
        "exceptional_nodes": exceptional,
        "rho": b.rho,
    })
}
