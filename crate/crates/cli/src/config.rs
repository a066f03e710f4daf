//! Scenario configuration. Parsing rejects unknown keys; [`ScenarioConfig::validate`]
//! runs the semantic checks that serde cannot express.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::field::FieldSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridConfig,
    #[serde(default)]
    pub operator: OperatorConfig,
    #[serde(default)]
    pub obstacle: Option<ObstacleConfig>,
    #[serde(default)]
    pub source: Option<FieldSpec>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub qvi: Option<QviBlock>,
    #[serde(default)]
    pub sensitivity: Option<SensitivityBlock>,
    #[serde(default)]
    pub control: Option<ControlBlock>,
    #[serde(default)]
    pub multiplicity: Option<MultiplicityBlock>,
    /// Default output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeConfig {
    #[default]
    Upwind,
    Central,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    #[serde(default = "one")]
    pub diffusion: f64,
    #[serde(default)]
    pub advection: [f64; 2],
    #[serde(default)]
    pub reaction: f64,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default = "yes")]
    pub require_t_monotone: bool,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            diffusion: 1.0,
            advection: [0.0, 0.0],
            reaction: 0.0,
            scheme: SchemeConfig::Upwind,
            require_t_monotone: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleConfig {
    /// `Φ(y) = σ A⁻¹ y + f0`. Give `sigma` directly or as
    /// `contraction_fraction · c_a² / (c_a + c_b)`.
    PdeInverse {
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default)]
        contraction_fraction: Option<f64>,
        f0: FieldSpec,
    },
    Cutoff {
        delta: f64,
        centers: Vec<FieldSpec>,
        #[serde(default)]
        targets: Option<Vec<FieldSpec>>,
    },
    Constant {
        value: FieldSpec,
    },
    AffineScaling {
        scale: f64,
        offset: FieldSpec,
    },
}

/// Thresholds for the asserted checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Stopping tolerance of the iterative solvers (overridden by `--tol`).
    pub solve: f64,
    pub qvi_residual: f64,
    pub penalty_reference: f64,
    pub monotone: f64,
    pub bracket: f64,
    pub derivative_residual: f64,
    pub homogeneity: f64,
    pub gradient: f64,
    pub stationarity: f64,
    pub multiplicity_residual: f64,
    pub lq: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            solve: 1e-10,
            qvi_residual: 1e-6,
            penalty_reference: 1e-4,
            monotone: 1e-10,
            bracket: 1e-8,
            derivative_residual: 1e-8,
            homogeneity: 1e-9,
            gradient: 1e-4,
            stationarity: 1e-6,
            multiplicity_residual: 1e-9,
            lq: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteConfig {
    Iteration,
    Interval,
    Penalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsRuleConfig {
    #[default]
    EqualsRho,
    Scaled {
        factor: f64,
    },
    Constant {
        epsilon: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QviBlock {
    pub routes: Vec<RouteConfig>,
    /// Start of the iteration route; `A⁻¹f` when absent.
    #[serde(default)]
    pub y0: Option<FieldSpec>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub schedule: Option<Vec<f64>>,
    #[serde(default)]
    pub eps_rule: EpsRuleConfig,
    /// `ρ` at which the penalty path is compared with the iteration route.
    #[serde(default)]
    pub reference_rho: Option<f64>,
    #[serde(default)]
    pub interval: Option<IntervalConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalConfig {
    /// Supersolution load `F ≥ f`; `f` when absent.
    #[serde(default)]
    pub f_upper: Option<FieldSpec>,
    /// Subsolution `v₀`; zero when absent.
    #[serde(default)]
    pub v0: Option<FieldSpec>,
    /// Random iteration starts inside `[v₀, A⁻¹F]` checked against the bracket.
    #[serde(default = "default_inside_samples")]
    pub inside_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityBlock {
    pub direction: FieldSpec,
    #[serde(default = "default_steps")]
    pub steps: Vec<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Random directions for the continuity check (0 disables it).
    #[serde(default)]
    pub continuity_directions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBlock {
    pub y_d: FieldSpec,
    pub nu: f64,
    /// Lower bound; `−∞` when absent.
    #[serde(default)]
    pub u_a: Option<FieldSpec>,
    /// Upper bound; `+∞` when absent.
    #[serde(default)]
    pub u_b: Option<FieldSpec>,
    #[serde(default)]
    pub u0: Option<FieldSpec>,
    #[serde(default)]
    pub schedule: Option<Vec<f64>>,
    #[serde(default)]
    pub eps_rule: EpsRuleConfig,
    #[serde(default = "default_pg_iter")]
    pub max_iter: usize,
    /// Additional random starts run alongside `u0`.
    #[serde(default)]
    pub multistart: usize,
    #[serde(default = "default_b_directions")]
    pub b_directions: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_gradient_rhos")]
    pub gradient_rhos: Vec<f64>,
    #[serde(default = "default_gradient_points")]
    pub gradient_points: usize,
    #[serde(default = "one")]
    pub gradient_amplitude: f64,
    /// Shift added to the computed control for the negative B check.
    #[serde(default)]
    pub perturbation: Option<f64>,
    /// Compare with the dense unconstrained optimum.
    #[serde(default)]
    pub lq_oracle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "example", rename_all = "snake_case", deny_unknown_fields)]
pub enum MultiplicityBlock {
    /// Centers are the solutions; the load is `max(Ay_1, …, Ay_N)`.
    Centers {
        delta: f64,
        centers: Vec<FieldSpec>,
        #[serde(default)]
        direction: Option<FieldSpec>,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
    /// Solutions of the obstacle problems with the given obstacles and the
    /// scenario source.
    Obstacles {
        delta: f64,
        obstacles: Vec<FieldSpec>,
        #[serde(default)]
        direction: Option<FieldSpec>,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_max_iter() -> usize {
    1000
}
fn default_pg_iter() -> usize {
    5000
}
fn default_inside_samples() -> usize {
    5
}
fn default_steps() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3]
}
fn default_b_directions() -> usize {
    100
}
fn default_tau() -> f64 {
    0.05
}
fn default_gradient_rhos() -> Vec<f64> {
    vec![1e-1, 1e-3]
}
fn default_gradient_points() -> usize {
    5
}

/// A batch file: scenario paths relative to the batch file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    pub batch: Vec<String>,
}

/// Either a single scenario or a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigFile {
    Scenario(Box<ScenarioConfig>),
    Batch(Vec<(std::path::PathBuf, Result<ScenarioConfig, CliError>)>),
}

pub fn load_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if value.get("batch").is_some() {
        let batch: BatchConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let entries = batch
            .batch
            .iter()
            .map(|p| {
                let full = base.join(p);
                let cfg = load_scenario(&full);
                (full, cfg)
            })
            .collect();
        return Ok(ConfigFile::Batch(entries));
    }
    let cfg = parse_scenario(value, path)?;
    Ok(ConfigFile::Scenario(Box::new(cfg)))
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_scenario(value, path)
}

fn parse_scenario(value: serde_json::Value, path: &Path) -> Result<ScenarioConfig, CliError> {
    let cfg: ScenarioConfig = serde_json::from_value(value)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn decreasing(name: &str, v: &[f64]) -> Result<(), CliError> {
    if v.is_empty() {
        return Err(CliError::Config(format!("{name} must not be empty")));
    }
    for x in v {
        positive(name, *x)?;
    }
    if v.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CliError::Config(format!("{name} must be strictly decreasing")));
    }
    Ok(())
}

impl ScenarioConfig {
    /// Semantic checks that need no numerical work beyond evaluating fields.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(CliError::Config(format!(
                "name must be nonempty and use only [A-Za-z0-9_-], got {:?}",
                self.name
            )));
        }
        if !(1..=2).contains(&self.grid.dim) || self.grid.n == 0 {
            return Err(CliError::Config("grid needs dim 1 or 2 and n ≥ 1".into()));
        }
        let t = &self.tolerances;
        for (k, v) in [
            ("tolerances.solve", t.solve),
            ("tolerances.qvi_residual", t.qvi_residual),
            ("tolerances.penalty_reference", t.penalty_reference),
            ("tolerances.monotone", t.monotone),
            ("tolerances.bracket", t.bracket),
            ("tolerances.derivative_residual", t.derivative_residual),
            ("tolerances.homogeneity", t.homogeneity),
            ("tolerances.gradient", t.gradient),
            ("tolerances.stationarity", t.stationarity),
            ("tolerances.multiplicity_residual", t.multiplicity_residual),
            ("tolerances.lq", t.lq),
        ] {
            positive(k, v)?;
        }
        let grid = crate::build::grid(self)?;
        let n = grid.node_count;
        let check_field = |name: &str, f: &FieldSpec| f.validate(name, n);
        if let Some(o) = &self.obstacle {
            match o {
                ObstacleConfig::PdeInverse {
                    sigma,
                    contraction_fraction,
                    f0,
                } => {
                    match (sigma, contraction_fraction) {
                        (Some(s), None) => positive("obstacle.sigma", *s)?,
                        (None, Some(c)) => positive("obstacle.contraction_fraction", *c)?,
                        _ => {
                            return Err(CliError::Config(
                                "pde_inverse needs exactly one of sigma, contraction_fraction".into(),
                            ))
                        }
                    }
                    check_field("obstacle.f0", f0)?;
                }
                ObstacleConfig::Cutoff {
                    delta,
                    centers,
                    targets,
                } => {
                    positive("obstacle.delta", *delta)?;
                    for c in centers {
                        check_field("obstacle.centers", c)?;
                    }
                    if let Some(t) = targets {
                        if t.len() != centers.len() {
                            return Err(CliError::Config("cutoff targets must match centers".into()));
                        }
                        for c in t {
                            check_field("obstacle.targets", c)?;
                        }
                    }
                }
                ObstacleConfig::Constant { value } => check_field("obstacle.value", value)?,
                ObstacleConfig::AffineScaling { scale, offset } => {
                    if !scale.is_finite() {
                        return Err(CliError::Config("obstacle.scale must be finite".into()));
                    }
                    check_field("obstacle.offset", offset)?;
                }
            }
        }
        if let Some(s) = &self.source {
            check_field("source", s)?;
        }
        if let Some(q) = &self.qvi {
            if q.routes.is_empty() {
                return Err(CliError::Config("qvi.routes must not be empty".into()));
            }
            if let Some(y0) = &q.y0 {
                check_field("qvi.y0", y0)?;
            }
            if let Some(s) = &q.schedule {
                decreasing("qvi.schedule", s)?;
            }
            if let Some(r) = q.reference_rho {
                positive("qvi.reference_rho", r)?;
            }
            if let Some(i) = &q.interval {
                if let Some(f) = &i.f_upper {
                    check_field("qvi.interval.f_upper", f)?;
                }
                if let Some(f) = &i.v0 {
                    check_field("qvi.interval.v0", f)?;
                }
            }
        }
        if let Some(s) = &self.sensitivity {
            check_field("sensitivity.direction", &s.direction)?;
            decreasing("sensitivity.steps", &s.steps)?;
        }
        if let Some(c) = &self.control {
            positive("control.nu", c.nu)?;
            positive("control.tau", c.tau)?;
            check_field("control.y_d", &c.y_d)?;
            if let Some(s) = &c.schedule {
                decreasing("control.schedule", s)?;
            }
            for r in &c.gradient_rhos {
                positive("control.gradient_rhos", *r)?;
            }
            if let Some(u0) = &c.u0 {
                check_field("control.u0", u0)?;
            }
            let lo = match &c.u_a {
                Some(f) => f.evaluate_bound(&grid, f64::NEG_INFINITY)?,
                None => vec![f64::NEG_INFINITY; n],
            };
            let hi = match &c.u_b {
                Some(f) => f.evaluate_bound(&grid, f64::INFINITY)?,
                None => vec![f64::INFINITY; n],
            };
            if let Some(i) = (0..n).find(|&i| !(lo[i] <= hi[i])) {
                return Err(CliError::Config(format!(
                    "control bounds need u_a ≤ u_b; node {i} has u_a = {}, u_b = {}",
                    lo[i], hi[i]
                )));
            }
        }
        if let Some(m) = &self.multiplicity {
            let (delta, fields, direction) = match m {
                MultiplicityBlock::Centers {
                    delta,
                    centers,
                    direction,
                    ..
                } => (delta, centers, direction),
                MultiplicityBlock::Obstacles {
                    delta,
                    obstacles,
                    direction,
                    ..
                } => (delta, obstacles, direction),
            };
            positive("multiplicity.delta", *delta)?;
            if fields.len() < 2 {
                return Err(CliError::Config("multiplicity needs at least two fields".into()));
            }
            for f in fields {
                check_field("multiplicity", f)?;
            }
            if let Some(d) = direction {
                check_field("multiplicity.direction", d)?;
            }
        }
        Ok(())
    }
}
