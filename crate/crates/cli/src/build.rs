//! Turn configuration blocks into core objects.

use std::sync::Arc;

use qvi_core::mesh::AdvectionScheme;
use qvi_core::obstacle::{CutoffMap, ObstacleMap, PdeInverseMap};
use qvi_core::qvi::{default_schedule, EpsRule};
use qvi_core::{assemble_operator, build_grid, DiscreteOperator, DualVector, Grid, OperatorSpec, StateVector};

use crate::config::{EpsRuleConfig, ObstacleConfig, ScenarioConfig, SchemeConfig};
use crate::error::CliError;
use crate::field::FieldSpec;

pub fn grid(cfg: &ScenarioConfig) -> Result<Grid, CliError> {
    build_grid(cfg.grid.dim, cfg.grid.n).map_err(|e| CliError::Config(e.to_string()))
}

pub fn operator(cfg: &ScenarioConfig) -> Result<Arc<DiscreteOperator>, CliError> {
    let o = &cfg.operator;
    let spec = OperatorSpec {
        diffusion: o.diffusion,
        advection: o.advection[..cfg.grid.dim].to_vec(),
        reaction: o.reaction,
        scheme: match o.scheme {
            SchemeConfig::Upwind => AdvectionScheme::Upwind,
            SchemeConfig::Central => AdvectionScheme::Central,
        },
        require_t_monotone: o.require_t_monotone,
    };
    let op = assemble_operator(grid(cfg)?, &spec).map_err(|e| match e {
        e @ (qvi_core::Error::InvalidInput(_) | qvi_core::Error::SignPattern { .. }) => {
            CliError::Config(e.to_string())
        }
        other => CliError::Solver(other.to_string()),
    })?;
    Ok(Arc::new(op))
}

pub fn state(field: &FieldSpec, op: &DiscreteOperator) -> Result<StateVector, CliError> {
    Ok(StateVector::new(field.evaluate(&op.grid, Some(op))?))
}

pub fn load(field: &FieldSpec, op: &DiscreteOperator) -> Result<DualVector, CliError> {
    Ok(DualVector::new(field.evaluate(&op.grid, Some(op))?))
}

pub fn source(cfg: &ScenarioConfig, op: &DiscreteOperator) -> Result<DualVector, CliError> {
    let f = cfg
        .source
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs a `source` field".into()))?;
    load(f, op)
}

pub fn obstacle(cfg: &ScenarioConfig, op: &Arc<DiscreteOperator>) -> Result<ObstacleMap, CliError> {
    let o = cfg
        .obstacle
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs an `obstacle` block".into()))?;
    let map = match o {
        ObstacleConfig::PdeInverse {
            sigma,
            contraction_fraction,
            f0,
        } => {
            let sigma = match (sigma, contraction_fraction) {
                (Some(s), _) => *s,
                (None, Some(c)) => c * op.c_a * op.c_a / (op.c_a + op.c_b),
                (None, None) => unreachable!("validated"),
            };
            ObstacleMap::PdeInverse(
                PdeInverseMap::new(op.clone(), sigma, state(f0, op)?)
                    .map_err(|e| CliError::Config(e.to_string()))?,
            )
        }
        ObstacleConfig::Cutoff {
            delta,
            centers,
            targets,
        } => {
            let c: Vec<StateVector> = centers.iter().map(|f| state(f, op)).collect::<Result<_, _>>()?;
            let t = match targets {
                Some(t) => t.iter().map(|f| state(f, op)).collect::<Result<_, _>>()?,
                None => c.clone(),
            };
            ObstacleMap::Cutoff(cutoff(*delta, c, t, op)?)
        }
        ObstacleConfig::Constant { value } => ObstacleMap::Constant(state(value, op)?),
        ObstacleConfig::AffineScaling { scale, offset } => ObstacleMap::AffineScaling {
            scale: *scale,
            offset: state(offset, op)?,
        },
    };
    Ok(map)
}

pub fn cutoff(
    delta: f64,
    centers: Vec<StateVector>,
    targets: Vec<StateVector>,
    op: &DiscreteOperator,
) -> Result<CutoffMap, CliError> {
    CutoffMap::new(delta, centers, targets, op.grid.cell_volume())
        .map_err(|e| CliError::Config(e.to_string()))
}

pub fn eps_rule(c: EpsRuleConfig) -> EpsRule {
    match c {
        EpsRuleConfig::EqualsRho => EpsRule::EqualsRho,
        EpsRuleConfig::Scaled { factor } => EpsRule::Scaled(factor),
        EpsRuleConfig::Constant { epsilon } => EpsRule::Constant(epsilon),
    }
}

pub fn schedule(s: &Option<Vec<f64>>) -> Vec<f64> {
    s.clone().unwrap_or_else(default_schedule)
}
