//! Command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::check::run_checks;
use crate::config::{recheck, validate_config, ScenarioConfig, Solver};
use crate::table::{run_table, Suite};
use crate::{run_scenario, ConfigError, RunError};

#[derive(Debug, Parser)]
#[command(name = "relwealth", version, about = "Relative-wealth portfolio game under partial information")]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Run one scenario.
    Run,
    /// Run a named table suite: pde_vs_fbsde, lin_stats, nl_stats, hetero, lr_sweep.
    Table { name: String },
    /// Run the invariant suite.
    Check,
    /// Learning-rate study (same as `table lr_sweep`).
    Sweep,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SolverArg {
    Analytic,
    Fbsde,
    Both,
}

#[derive(Debug, Args)]
pub struct Flags {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub serial: bool,
    #[arg(long, global = true, value_enum)]
    pub solver: Option<SolverArg>,
}

/// Reads, validates and applies flag overrides.
pub fn load_config(flags: &Flags) -> Result<ScenarioConfig, RunError> {
    let text = match &flags.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::single("--config", format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = validate_config(&text)?;
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(o) = &flags.out {
        cfg.out = o.clone();
    }
    cfg.serial |= flags.serial;
    if let Some(s) = flags.solver {
        cfg.solver = match s {
            SolverArg::Analytic => Solver::Analytic,
            SolverArg::Fbsde => Solver::Fbsde,
            SolverArg::Both => Solver::Both,
        };
    }
    recheck(&cfg)?;
    Ok(cfg)
}

fn table(suite: Suite, flags: &Flags) -> Result<(), RunError> {
    let cfg = load_config(flags)?;
    let report = run_table(suite, &cfg)?;
    println!("{} rows -> {}", report.rows.len(), report.path.display());
    if !report.failures.is_empty() {
        let cells = report.failures.iter().map(|(c, e)| format!("{c} ({e})")).collect::<Vec<_>>().join("; ");
        return Err(RunError::PartialTable { failed: report.failures.len(), total: crate::table::cells(suite, &cfg).len(), cells });
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), RunError> {
    match &cli.verb {
        Verb::Run => {
            let cfg = load_config(&cli.flags)?;
            let report = run_scenario(&cfg)?;
            for o in report.outcomes() {
                println!("{} {}: pi0 {:?} v0 {:?}", report.label, o.solver, o.initial_positions, o.values);
            }
            for w in &report.warnings {
                println!("warning: {w}");
            }
            println!("artifacts -> {}", cfg.out.display());
            Ok(())
        }
        Verb::Table { name } => {
            let suite: Suite = name.parse().map_err(|e: String| ConfigError::single("table", e))?;
            table(suite, &cli.flags)
        }
        Verb::Sweep => table(Suite::LrSweep, &cli.flags),
        Verb::Check => {
            let lines = run_checks();
            for l in &lines {
                println!("{l}");
            }
            match lines.iter().filter(|l| !l.passed).count() {
                0 => Ok(()),
                n => Err(RunError::Numeric(format!("{n} invariant check(s) failed"))),
            }
        }
    }
}

pub fn main_with(cli: Cli) -> ExitCode {
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
