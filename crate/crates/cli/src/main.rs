//! `constrest`: constrained efficient estimation from the command line.
//!
//! Each subcommand reads one JSON config and writes one JSON report. Failures
//! print a single-line JSON error object to standard error and exit with 2
//! (input), 3 (numerical) or 4 (convergence).

mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "constrest", version, about = "Efficient estimation under equality constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a built-in model to CSV data and apply the constrained correction.
    Estimate(Common),
    /// Constrained information bound in both algebraic forms.
    Bound(Common),
    /// Euclidean projection of a point onto a constraint manifold.
    Project(Common),
    /// Run a seeded Monte Carlo scenario.
    Simulate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of a simulation config.
    #[arg(long)]
    seed: Option<u64>,
    /// Report destination; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or_default();
            return fail(&CliError::Usage(line.trim_start_matches("error: ").to_string()));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate(c) => {
            let report = commands::estimate(config::load(&c.config)?, &c.config)?;
            emit(&report, c.output.as_deref())
        }
        Command::Bound(c) => emit(&commands::bound(config::load(&c.config)?)?, c.output.as_deref()),
        Command::Project(c) => emit(&commands::project(config::load(&c.config)?)?, c.output.as_deref()),
        Command::Simulate(c) => {
            let report = commands::simulate_cmd(config::load(&c.config)?, c.seed)?;
            emit(&report, c.output.as_deref())
        }
    }
}

fn emit<T: Serialize>(report: &T, output: Option<&Path>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    match output {
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|source| CliError::Io {
                path: "<stdout>".into(),
                source,
            })
        }
        Some(path) => write_atomic(path, text.as_bytes()),
    }
}

/// Writes through a temporary file in the destination directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Io { path: path.display().to_string(), source };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}
