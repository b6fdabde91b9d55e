//! Command-line front end for the [`extremal`] toolkit.
//!
//! Three subcommands cover the indirect-method workflow for fixed-endpoint
//! second-order optimal control problems:
//!
//! * `solve` — shoot for an extremal of the configured problem and write
//!   `extremal.csv` (the trajectory, costate, and stationary control on a
//!   uniform grid) plus `summary.json` (converged covector, cost, residuals,
//!   Legendre verdict).
//! * `conjugate` — propagate the Jacobi bundles in both the Hamiltonian and
//!   the Lagrangian picture, scan their determinants for the first conjugate
//!   time, and write `conjugate.json` (the full report) plus `det.csv` (both
//!   determinant curves on one grid).
//! * `check` — run the identity and consistency suites (derivative checks,
//!   pointwise Lagrangian/Hamiltonian agreement, flow equivalence, and — for
//!   linear-quadratic problems — control-Hessian exactness and
//!   cross-formulation conjugate-time agreement) and write `check.json`.
//!
//! Problems come either from the built-in registry (`--problem <name>` or
//! `{"problem": {"registry": "<name>"}}` in the JSON config) or inline as
//! linear-quadratic data (`{"problem": {"lq": {...}}}` with matrices as
//! row-major nested arrays). See [`config`] for the full configuration
//! schema.
//!
//! Exit codes: `0` on success (for `solve`: convergence; for `conjugate`:
//! any computed verdict; for `check`: every property passed), `2` when the
//! shooting iteration does not converge, and `1` for configuration or
//! runtime errors. All diagnostics go to standard error; output files are
//! deterministic for a fixed configuration.

pub mod checks;
pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Top-level argument parser for the `extremal` binary.
#[derive(Debug, Parser)]
#[command(
    name = "extremal",
    version,
    about = "Indirect-method optimal control: solve extremals, locate conjugate times, check identities"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the two-point boundary value problem for an extremal; writes
    /// extremal.csv and summary.json.
    Solve(RunArgs),
    /// Propagate Jacobi bundles and scan for the first conjugate time;
    /// writes conjugate.json and det.csv.
    Conjugate(RunArgs),
    /// Run identity and consistency checks on the configured problem;
    /// writes check.json.
    Check(RunArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Path to a JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Output directory; overrides the config's `output_dir` (default ".").
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Registry problem name; overrides the config's problem source.
    #[arg(long)]
    pub problem: Option<String>,

    /// Suppress progress messages on standard error.
    #[arg(long)]
    pub quiet: bool,
}

/// Everything that stops a run, with the offending layer attached.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed or inconsistent configuration (bad JSON, missing fields,
    /// non-positive tolerances, shape mismatches).
    #[error("{0}")]
    Config(String),

    /// A toolkit call failed (integration, shooting, classification).
    #[error(transparent)]
    Core(#[from] extremal::Error),

    /// An output file could not be written.
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Prints a progress line to standard error unless `--quiet` was given.
pub(crate) fn progress(quiet: bool, msg: &str) {
    if !quiet {
        eprintln!("{msg}");
    }
}

/// Runs the parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let (args, cmd): (&RunArgs, fn(&config::Resolved, bool) -> Result<i32, CliError>) =
        match &cli.command {
            Command::Solve(a) => (a, commands::solve),
            Command::Conjugate(a) => (a, commands::conjugate),
            Command::Check(a) => (a, commands::check),
        };
    let resolved = match config::resolve(args) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match cmd(&resolved, args.quiet) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
