//! `vertseg` command-line front-end.
//!
//! Exit codes: 0 success, 2 input error, 3 one or more vertebrae flagged or
//! failed (outputs are still written).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "vertseg",
    version,
    about = "Vertebral body segmentation and trabecular BMD / volume measurement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic phantom with its ground truth.
    Phantom {
        /// Phantom spec JSON; the built-in three-vertebra phantom if omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment every seeded vertebra of the configured volume.
    Segment {
        #[arg(long)]
        config: PathBuf,
    },
    /// Accuracy against truth.json, or precision over jittered repeats.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Accuracy,
    Precision,
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => f.write_str(m),
        }
    }
}

impl From<vertseg::Error> for CliError {
    fn from(e: vertseg::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

/// Whether every vertebra came through clean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Clean,
    Flagged,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("VERTSEG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::Input(format!("VERTSEG_THREADS must be a non-negative integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Phantom { spec, out } => commands::phantom(spec.as_deref(), &out),
        Command::Segment { config } => commands::segment(&config),
        Command::Report { config, mode } => match mode {
            Mode::Accuracy => commands::accuracy(&config),
            Mode::Precision => commands::precision(&config),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Flagged) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
