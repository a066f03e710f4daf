use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use qvi_lab::{execute, Command, Overrides};

/// Solve, differentiate and control quasi-variational inequalities from
/// JSON scenario files.
///
/// Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
/// 3 solver failure.
#[derive(Debug, Parser)]
#[command(name = "qvi-lab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Scenario file, or a batch file listing scenario files.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (per scenario; batches get one subdirectory each).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Scenarios of a batch to run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Overrides the solver stopping tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        tol: cli.tol,
    };
    let (code, outcomes) = execute(cli.command, &cli.config, cli.out.as_deref(), overrides, cli.jobs);
    for o in &outcomes {
        let name = if o.scenario.is_empty() { "-" } else { &o.scenario };
        println!("{name}: {} [{}]", o.summary, o.out_dir.display());
    }
    ExitCode::from(u8::try_from(code).unwrap_or(3))
}
