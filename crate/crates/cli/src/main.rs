//! Command-line front end: reproducible solver runs with manifested
//! artifacts.
//!
//! Three sub-commands share one artifact convention (CSV tables, JSON
//! reports, one documented binary dump for value fields):
//!
//! * `solve` — freeze the speed field induced by a plan bundle (the
//!   stationary initial plans by default) and export every population's
//!   value function and traced trajectories.
//! * `equilibrium` — run the fixed-point iteration and export the
//!   iteration log, final bundles, and measure-flow snapshots.
//! * `verify` — re-run the diagnostics suite against stored artifacts,
//!   guarded by content hashes.
//!
//! Exit codes: 0 success, 2 configuration error, 3 CFL violation,
//! 4 iteration cap hit before convergence (artifacts still written),
//! 5 artifact/scenario hash mismatch, 1 anything else (including failed
//! verification checks).

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mfg", version, about = "Multi-population minimal-time mean field game solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve all value functions for a fixed plan bundle and export them.
    Solve(SolveArgs),
    /// Iterate best responses to an equilibrium and export the run.
    Equilibrium(EquilibriumArgs),
    /// Re-run diagnostics on the artifacts of a previous run.
    Verify(VerifyArgs),
}

/// Flags shared by every sub-command.
#[derive(Debug, Args)]
struct CommonArgs {
    /// Scenario configuration file (JSON).
    #[arg(long, value_name = "PATH")]
    scenario: PathBuf,
    /// Override the scenario's sampling seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (default: machine parallelism).
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Probe directions per semi-Lagrangian update.
    #[arg(long, value_name = "M")]
    directions: Option<usize>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory to write artifacts into (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Build the speed field from `trajectories_pop{i}.csv` files in this
    /// directory instead of the stationary initial plans.
    #[arg(long, value_name = "DIR")]
    bundles: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EquilibriumArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory to write artifacts into (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Iteration cap; hitting it without converging exits 4.
    #[arg(long, value_name = "N", default_value_t = 60)]
    max_iters: usize,
    /// Stop once the plan-update residual drops below this.
    #[arg(long, value_name = "FLOAT", default_value_t = 1e-4)]
    tol: f64,
    /// Plan update rule between iterations.
    #[arg(long, value_enum, default_value_t = Mode::Fictitious)]
    mode: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Average all best responses seen so far.
    Fictitious,
    /// Replace the plan by the latest best response.
    Picard,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Artifact directory of the run to verify (must hold manifest.json).
    #[arg(long, value_name = "DIR")]
    artifacts: PathBuf,
    /// Where to write report.json (default: the artifact directory).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

/// Failure carrying the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<mfg_core::Error> for Failure {
    fn from(err: mfg_core::Error) -> Self {
        Failure::new(exit_code_for(&err), err.to_string())
    }
}

/// Maps library errors onto the documented exit codes: 3 for CFL, 2 for
/// anything wrong with the configuration, 1 for runtime failures.
fn exit_code_for(err: &mfg_core::Error) -> u8 {
    use mfg_core::Error::*;
    match err {
        CflViolation { .. } => 3,
        Config(_)
        | InvalidParameter { .. }
        | InvalidWeights(_)
        | DimensionMismatch { .. }
        | EmptyTargetMask { .. }
        | GridMismatch(_)
        | OutOfDomain(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(args) => commands::solve(args),
        Command::Equilibrium(args) => commands::equilibrium(args),
        Command::Verify(args) => commands::verify(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("mfg: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
