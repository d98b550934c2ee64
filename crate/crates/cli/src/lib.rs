//! Command-line front end: training runs, depth sweeps and analysis exports.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::io::Write;

use clap::{Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] ndgg::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Run(ndgg::Error::Config(_)) => 2,
            CliError::Run(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ndgg", version, about = "Degree-gated graph networks: training and smoothing analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model, once per seed; writes metrics.json and history.csv.
    Train(RunConfig),
    /// Accuracy against depth, overall and per degree bucket; writes sweep.csv.
    SweepDepth(RunConfig),
    /// Smoothing diagnostics.
    #[command(subcommand)]
    Analyze(Analyze),
}

#[derive(Debug, Subcommand)]
pub enum Analyze {
    /// MDCN of Â^k X for k = 0..=kmax; writes mdcn.csv.
    Mdcn(RunConfig),
    /// Per-node depth bound from λ₂; writes kbound.json.
    Kbound(RunConfig),
    /// Distance to the stationary direction on the largest component; writes limit.csv.
    Limit(RunConfig),
    /// Test accuracy by degree bucket of a trained model; writes buckets.csv.
    Buckets(RunConfig),
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Messages go to `out` and `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Train(c) => commands::train(&c.resolve()?, out),
        Command::SweepDepth(c) => commands::sweep_depth(&c.resolve()?, out),
        Command::Analyze(Analyze::Mdcn(c)) => commands::mdcn(&c.resolve()?, out),
        Command::Analyze(Analyze::Kbound(c)) => commands::kbound(&c.resolve()?, out),
        Command::Analyze(Analyze::Limit(c)) => commands::limit(&c.resolve()?, out),
        Command::Analyze(Analyze::Buckets(c)) => commands::buckets(&c.resolve()?, out),
    }
}
