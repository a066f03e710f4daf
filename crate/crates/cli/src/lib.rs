//! Scenario runner behind the `qvi-lab` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod build;
pub mod commands;
pub mod config;
pub mod error;
pub mod field;
pub mod report;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub use commands::{run_scenario, Command, Overrides};
pub use config::{load_config, load_scenario, ConfigFile, ScenarioConfig};
pub use error::CliError;
pub use report::Artifacts;

/// Outcome of one scenario run, with the directory its files went to.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub scenario: String,
    pub out_dir: PathBuf,
    pub exit_code: i32,
    pub summary: String,
}

/// Run `cfg` and write its artifacts (or `error.json`) into `out_dir`.
pub fn run_and_write(cfg: &ScenarioConfig, command: Command, out_dir: &Path, overrides: Overrides) -> RunOutcome {
    let (code, summary) = match run_scenario(cfg, command, overrides) {
        Ok(a) => match a.write(out_dir) {
            Ok(()) => {
                let failed: Vec<&str> = a.report.failed_checks().map(|c| c.name.as_str()).collect();
                let s = if failed.is_empty() {
                    format!("pass ({} checks)", a.report.checks.len())
                } else {
                    format!("fail: {}", failed.join(", "))
                };
                (a.exit_code(), s)
            }
            Err(e) => (e.exit_code(), e.to_string()),
        },
        Err(e) => {
            let _ = report::write_error(out_dir, &cfg.name, command.name(), &e);
            (e.exit_code(), e.to_string())
        }
    };
    RunOutcome {
        scenario: cfg.name.clone(),
        out_dir: out_dir.to_path_buf(),
        exit_code: code,
        summary,
    }
}

/// Entry point shared by the binary and tests. Returns the process exit
/// code; batches report the largest code of their scenarios.
pub fn execute(
    command: Command,
    config: &Path,
    out: Option<&Path>,
    overrides: Overrides,
    jobs: usize,
) -> (i32, Vec<RunOutcome>) {
    let file = match load_config(config) {
        Ok(f) => f,
        Err(e) => {
            let dir = out.map_or_else(|| PathBuf::from("out"), Path::to_path_buf);
            let _ = report::write_error(&dir, "", command.name(), &e);
            let o = RunOutcome {
                scenario: String::new(),
                out_dir: dir,
                exit_code: e.exit_code(),
                summary: e.to_string(),
            };
            return (o.exit_code, vec![o]);
        }
    };
    match file {
        ConfigFile::Scenario(cfg) => {
            let dir = match (out, &cfg.output) {
                (Some(o), _) => o.to_path_buf(),
                (None, Some(o)) => PathBuf::from(o),
                (None, None) => Path::new("out").join(&cfg.name),
            };
            let o = run_and_write(&cfg, command, &dir, overrides);
            (o.exit_code, vec![o])
        }
        ConfigFile::Batch(entries) => {
            let root = out.map_or_else(|| PathBuf::from("out"), Path::to_path_buf);
            run_batch(entries, command, &root, overrides, jobs)
        }
    }
}

fn run_batch(
    entries: Vec<(PathBuf, Result<ScenarioConfig, CliError>)>,
    command: Command,
    root: &Path,
    overrides: Overrides,
    jobs: usize,
) -> (i32, Vec<RunOutcome>) {
    let mut seen = std::collections::BTreeSet::new();
    let mut outcomes: Vec<Option<RunOutcome>> = vec![None; entries.len()];
    let mut work = Vec::new();
    for (i, (path, cfg)) in entries.into_iter().enumerate() {
        match cfg {
            Ok(c) if !seen.insert(c.name.clone()) => {
                let e = CliError::Config(format!("duplicate scenario name {:?} in batch", c.name));
                outcomes[i] = Some(failed(&path, root, command, e));
            }
            Ok(c) => work.push((i, c)),
            Err(e) => outcomes[i] = Some(failed(&path, root, command, e)),
        }
    }
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(work.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some((i, cfg)) = work.get(k) else { break };
                let o = run_and_write(cfg, command, &root.join(&cfg.name), overrides);
                results.lock().expect("result lock").push((*i, o));
            });
        }
    });
    for (i, o) in results.into_inner().expect("result lock") {
        outcomes[i] = Some(o);
    }
    let outcomes: Vec<RunOutcome> = outcomes.into_iter().flatten().collect();
    let code = outcomes.iter().map(|o| o.exit_code).max().unwrap_or(0);
    (code, outcomes)
}

fn failed(path: &Path, root: &Path, command: Command, e: CliError) -> RunOutcome {
    let stem = path
        .file_stem()
        .map_or_else(|| "scenario".to_string(), |s| s.to_string_lossy().into_owned());
    let dir = root.join(&stem);
    let _ = report::write_error(&dir, &stem, command.name(), &e);
    RunOutcome {
        scenario: stem,
        out_dir: dir,
        exit_code: e.exit_code(),
        summary: e.to_string(),
    }
}
