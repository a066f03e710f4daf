//! Nodal fields from a small set of named formulas. Coordinates are node
//! positions in the unit square; 1D grids use the first coordinate only.

use serde::{Deserialize, Serialize};

use qvi_core::{DiscreteOperator, Grid};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant {
        value: f64,
    },
    /// Explicit nodal values; `null` marks an unbounded entry in a bound.
    Nodal {
        values: Vec<Option<f64>>,
    },
    /// `intercept + slope·x₁ + slope_y·x₂`.
    LinearRamp {
        intercept: f64,
        slope: f64,
        #[serde(default)]
        slope_y: f64,
    },
    /// `offset + amplitude·exp(−|x − center|²/width²)`.
    GaussianBump {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `amplitude·sin(frequency·(x₁ − shift))`, times the same factor in
    /// `x₂` on 2D grids.
    Sine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        shift: f64,
    },
    /// `value` on the box `[from, to]`, `outside` elsewhere (`null` means
    /// unbounded in a bound).
    Window {
        value: f64,
        from: Vec<f64>,
        to: Vec<f64>,
        #[serde(default)]
        outside: Option<f64>,
    },
    /// Nodewise `max(A g₁, …, A g_N)`.
    MaxOfOperatorImages {
        fields: Vec<FieldSpec>,
    },
}

impl FieldSpec {
    pub fn validate(&self, name: &str, n: usize) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(format!("{name}: {msg}")));
        match self {
            FieldSpec::Constant { value } if !value.is_finite() => bad("value must be finite".into()),
            FieldSpec::Nodal { values } if values.len() != n => {
                bad(format!("expected {n} nodal values, got {}", values.len()))
            }
            FieldSpec::Nodal { values } if values.iter().flatten().any(|v| !v.is_finite()) => {
                bad("nodal values must be finite".into())
            }
            FieldSpec::GaussianBump { width, center, .. } if !(*width > 0.0) || center.is_empty() => {
                bad("gaussian_bump needs width > 0 and a center".into())
            }
            FieldSpec::Window { from, to, .. } if from.is_empty() || from.len() != to.len() => {
                bad("window needs matching nonempty from/to".into())
            }
            FieldSpec::MaxOfOperatorImages { fields } if fields.is_empty() => {
                bad("max_of_operator_images needs at least one field".into())
            }
            FieldSpec::MaxOfOperatorImages { fields } => {
                fields.iter().try_for_each(|f| f.validate(name, n))
            }
            _ => Ok(()),
        }
    }

    /// Evaluate a field that must be finite everywhere. Operator images need
    /// `op`.
    pub fn evaluate(&self, grid: &Grid, op: Option<&DiscreteOperator>) -> Result<Vec<f64>, CliError> {
        let v = self.eval_inner(grid, op, None)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CliError::Config(
                "field has unbounded entries where finite values are required".into(),
            ));
        }
        Ok(v)
    }

    /// Evaluate a bound; unbounded entries become `unbounded`.
    pub fn evaluate_bound(&self, grid: &Grid, unbounded: f64) -> Result<Vec<f64>, CliError> {
        self.eval_inner(grid, None, Some(unbounded))
    }

    fn eval_inner(
        &self,
        grid: &Grid,
        op: Option<&DiscreteOperator>,
        unbounded: Option<f64>,
    ) -> Result<Vec<f64>, CliError> {
        let n = grid.node_count;
        let missing = || {
            unbounded.ok_or_else(|| {
                CliError::Config("null entries are only allowed in control bounds".into())
            })
        };
        let xs: Vec<[f64; 2]> = (0..n).map(|k| grid.coords(k)).collect();
        let two_d = grid.dim == 2;
        Ok(match self {
            FieldSpec::Constant { value } => vec![*value; n],
            FieldSpec::Nodal { values } => {
                if values.len() != n {
                    return Err(CliError::Config(format!(
                        "expected {n} nodal values, got {}",
                        values.len()
                    )));
                }
                values
                    .iter()
                    .map(|v| v.map_or_else(missing, Ok))
                    .collect::<Result<_, _>>()?
            }
            FieldSpec::LinearRamp {
                intercept,
                slope,
                slope_y,
            } => xs
                .iter()
                .map(|x| intercept + slope * x[0] + if two_d { slope_y * x[1] } else { 0.0 })
                .collect(),
            FieldSpec::GaussianBump {
                amplitude,
                center,
                width,
                offset,
            } => xs
                .iter()
                .map(|x| {
                    let mut r2 = (x[0] - center[0]).powi(2);
                    if two_d {
                        r2 += (x[1] - center.get(1).copied().unwrap_or(0.5)).powi(2);
                    }
                    offset + amplitude * (-r2 / (width * width)).exp()
                })
                .collect(),
            FieldSpec::Sine {
                amplitude,
                frequency,
                shift,
            } => xs
                .iter()
                .map(|x| {
                    let mut v = amplitude * (frequency * (x[0] - shift)).sin();
                    if two_d {
                        v *= (frequency * (x[1] - shift)).sin();
                    }
                    v
                })
                .collect(),
            FieldSpec::Window {
                value,
                from,
                to,
                outside,
            } => {
                let out = match outside {
                    Some(v) => *v,
                    None => missing()?,
                };
                let dims = if two_d { 2 } else { 1 };
                xs.iter()
                    .map(|x| {
                        let inside = (0..dims).all(|d| {
                            let lo = from.get(d).copied().unwrap_or(f64::NEG_INFINITY);
                            let hi = to.get(d).copied().unwrap_or(f64::INFINITY);
                            (lo..=hi).contains(&x[d])
                        });
                        if inside {
                            *value
                        } else {
                            out
                        }
                    })
                    .collect()
            }
            FieldSpec::MaxOfOperatorImages { fields } => {
                let op = op.ok_or_else(|| {
                    CliError::Config("max_of_operator_images is not available here".into())
                })?;
                let mut acc = vec![f64::NEG_INFINITY; n];
                for f in fields {
                    let g = f.evaluate(grid, Some(op))?;
                    let ag = op.apply(&g)?;
                    for (a, v) in acc.iter_mut().zip(ag.iter()) {
                        *a = a.max(*v);
                    }
                }
                acc
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qvi_core::build_grid;

    #[test]
    fn formulas() {
        let g = build_grid(1, 3).unwrap();
        let ramp = FieldSpec::LinearRamp {
            intercept: 1.0,
            slope: 4.0,
            slope_y: 0.0,
        };
        assert_eq!(ramp.evaluate(&g, None).unwrap(), vec![2.0, 3.0, 4.0]);
        let w = FieldSpec::Window {
            value: 5.0,
            from: vec![0.4],
            to: vec![0.6],
            outside: None,
        };
        assert!(w.evaluate(&g, None).is_err());
        let b = w.evaluate_bound(&g, f64::NEG_INFINITY).unwrap();
        assert_eq!(b, vec![f64::NEG_INFINITY, 5.0, f64::NEG_INFINITY]);
    }

    #[test]
    fn nodal_length_checked() {
        let f = FieldSpec::Nodal {
            values: vec![Some(1.0); 2],
        };
        assert!(f.validate("x", 3).is_err());
        assert!(f.validate("x", 2).is_ok());
    }

    #[test]
    fn unknown_keys_rejected() {
        let r: Result<FieldSpec, _> =
            serde_json::from_str(r#"{"type":"constant","value":1,"extra":2}"#);
        assert!(r.is_err());
    }
}
