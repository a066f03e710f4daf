mod control;
mod multiplicity;
mod qvi_solve;
mod sensitivity;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use qvi_core::qvi::QviSolution;
use qvi_core::vi::ActiveSets;
use qvi_core::{DiscreteOperator, StateVector};

use crate::config::{ScenarioConfig, Tolerances};
use crate::error::CliError;
use crate::report::{Artifacts, Check, History, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    QviSolve,
    Sensitivity,
    Control,
    MultiplicityDemo,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::QviSolve => "qvi-solve",
            Command::Sensitivity => "sensitivity",
            Command::Control => "control",
            Command::MultiplicityDemo => "multiplicity-demo",
        }
    }
}

/// Command-line overrides of scenario settings.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
}

pub(crate) struct Ctx<'a> {
    pub cfg: &'a ScenarioConfig,
    pub op: Arc<DiscreteOperator>,
    pub seed: u64,
    pub solve_tol: f64,
    pub tol: Tolerances,
    pub report: Report,
    pub history: History,
    pub results: Map<String, Value>,
}

impl Ctx<'_> {
    /// Independent random stream per purpose.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }

    pub fn random_field(&self, rng: &mut ChaCha8Rng, scale: f64) -> StateVector {
        StateVector::new(
            (0..self.op.node_count())
                .map(|_| scale * rng.random_range(-1.0..1.0))
                .collect(),
        )
    }

    pub fn check(&mut self, c: Check) {
        self.report.check(c);
    }

    pub fn residual_checks(&mut self, prefix: &str, sol: &QviSolution, threshold: f64) {
        let r = sol.residuals;
        self.check(Check::at_most(format!("{prefix}.feasibility"), r.feasibility, threshold));
        self.check(Check::at_most(format!("{prefix}.dual_sign"), r.dual, threshold));
        self.check(Check::at_most(format!("{prefix}.complementarity"), r.complementarity, threshold));
    }

    pub fn iteration_history(&mut self, series: &str, sol: &QviSolution) {
        for r in &sol.history {
            self.history.push(series, r.iteration, "step", r.step);
            self.history.push(series, r.iteration, "ratio", r.ratio);
            self.history.push(series, r.iteration, "max_increase", r.max_increase);
            self.history.push(series, r.iteration, "max_decrease", r.max_decrease);
            self.history.push(series, r.iteration, "residual", r.residual);
        }
    }
}

pub(crate) fn sets_json(s: &ActiveSets) -> Value {
    json!({
        "inactive": s.inactive,
        "strongly_active": s.strongly_active,
        "biactive": s.biactive,
        "thresholds": {
            "tol_act": s.thresholds.tol_act,
            "tol_str": s.thresholds.tol_str,
            "tol_comp": s.thresholds.tol_comp,
        },
    })
}

pub(crate) fn solution_json(label: &str, sol: &QviSolution) -> Value {
    json!({
        "label": label,
        "route": sol.route.name(),
        "y": sol.y.values(),
        "xi": sol.xi.values(),
        "obstacle": sol.obstacle.values(),
        "sets": sets_json(&sol.sets),
        "residuals": {
            "feasibility": sol.residuals.feasibility,
            "dual_sign": sol.residuals.dual,
            "complementarity": sol.residuals.complementarity,
        },
    })
}

/// Run one scenario and return its artifacts without writing them.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    command: Command,
    overrides: Overrides,
) -> Result<Artifacts, CliError> {
    cfg.validate()?;
    if let Some(t) = overrides.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Config(format!("--tol must be positive, got {t}")));
        }
    }
    let op = crate::build::operator(cfg)?;
    let seed = overrides.seed.unwrap_or(cfg.seed);
    let report = Report::new(&cfg.name, command.name(), seed, &op);
    let mut results = Map::new();
    results.insert("scenario".into(), json!(cfg.name));
    results.insert("command".into(), json!(command.name()));
    results.insert(
        "grid".into(),
        json!({
            "dim": op.grid.dim,
            "n_per_axis": op.grid.n_per_axis,
            "h": op.grid.h,
            "node_count": op.grid.node_count,
        }),
    );
    let mut ctx = Ctx {
        cfg,
        op,
        seed,
        solve_tol: overrides.tol.unwrap_or(cfg.tolerances.solve),
        tol: cfg.tolerances,
        report,
        history: History::default(),
        results,
    };
    match command {
        Command::QviSolve => qvi_solve::run(&mut ctx)?,
        Command::Sensitivity => sensitivity::run(&mut ctx)?,
        Command::Control => control::run(&mut ctx)?,
        Command::MultiplicityDemo => multiplicity::run(&mut ctx)?,
    }
    Ok(Artifacts::new(ctx.results, ctx.history, ctx.report))
}
