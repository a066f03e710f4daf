//! Run artifacts: `results.json`, `history.csv`, `report.json`.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use qvi_core::mesh::ConstantProvenance;
use qvi_core::DiscreteOperator;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Comparison {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = "<")]
    Below,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = ">")]
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, comparison: Comparison, threshold: f64) -> Self {
        let pass = match comparison {
            Comparison::AtMost => value <= threshold,
            Comparison::Below => value < threshold,
            Comparison::AtLeast => value >= threshold,
            Comparison::Above => value > threshold,
        };
        Self {
            name: name.into(),
            value,
            threshold,
            comparison,
            pass,
        }
    }

    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, Comparison::AtMost, threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub method: &'static str,
    pub iterations: usize,
    pub converged: bool,
}

impl From<ConstantProvenance> for Provenance {
    fn from(p: ConstantProvenance) -> Self {
        Self {
            method: p.method,
            iterations: p.iterations,
            converged: p.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constants {
    pub c_a: f64,
    pub c_b: f64,
    pub c_a_provenance: Provenance,
    pub c_b_provenance: Provenance,
    pub is_t_monotone: bool,
}

impl Constants {
    pub fn of(op: &DiscreteOperator) -> Self {
        Self {
            c_a: op.c_a,
            c_b: op.c_b,
            c_a_provenance: op.c_a_provenance.into(),
            c_b_provenance: op.c_b_provenance.into(),
            is_t_monotone: op.is_t_monotone,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub command: String,
    pub seed: u64,
    pub status: &'static str,
    /// Asserted checks; any failure gives exit code 1.
    pub checks: Vec<Check>,
    /// Evaluated and recorded, never asserted.
    pub reported: Vec<Check>,
    pub constants: Constants,
    pub info: Map<String, Value>,
}

impl Report {
    pub fn new(scenario: &str, command: &str, seed: u64, op: &DiscreteOperator) -> Self {
        Self {
            scenario: scenario.to_string(),
            command: command.to_string(),
            seed,
            status: "pass",
            checks: Vec::new(),
            reported: Vec::new(),
            constants: Constants::of(op),
            info: Map::new(),
        }
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn record(&mut self, c: Check) {
        self.reported.push(c);
    }

    pub fn info(&mut self, key: &str, v: impl Serialize) {
        self.info
            .insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    fn finalize(&mut self) {
        self.status = if self.passed() { "pass" } else { "fail" };
    }
}

/// Long-format history: one row per recorded quantity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    rows: Vec<(String, usize, &'static str, f64)>,
}

impl History {
    pub const HEADER: &'static str = "series,iteration,quantity,value";

    pub fn push(&mut self, series: &str, iteration: usize, quantity: &'static str, value: f64) {
        self.rows.push((series.to_string(), iteration, quantity, value));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(32 * (self.rows.len() + 1));
        s.push_str(Self::HEADER);
        s.push('\n');
        for (series, it, q, v) in &self.rows {
            let _ = writeln!(s, "{series},{it},{q},{v:e}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub results: Value,
    pub history: History,
    pub report: Report,
}

impl Artifacts {
    pub fn new(results: Map<String, Value>, history: History, mut report: Report) -> Self {
        report.finalize();
        Self {
            results: Value::Object(results),
            history,
            report,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.report.passed() {
            0
        } else {
            1
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("results.json"), &self.results)?;
        std::fs::write(dir.join("history.csv"), self.history.to_csv())?;
        write_json(&dir.join("report.json"), &self.report)?;
        let stale = dir.join("error.json");
        if stale.exists() {
            std::fs::remove_file(stale)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRecord<'a> {
    pub scenario: &'a str,
    pub command: &'a str,
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
}

pub fn write_error(dir: &Path, scenario: &str, command: &str, err: &CliError) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let rec = ErrorRecord {
        scenario,
        command,
        kind: err.kind(),
        exit_code: err.exit_code(),
        message: err.to_string(),
    };
    write_json(&dir.join("error.json"), &rec)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
