//! Command-line front end for the `levy-switching` library.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use levy_switching::solver::Scheme;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "levyswitch", version, about = "Optimal switching with Levy-driven state")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    Monotone,
    Picard,
    Direct,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Monotone => Scheme::Monotone,
            SchemeArg::Picard => Scheme::Picard,
            SchemeArg::Direct => Scheme::Direct,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every structural check on the configuration.
    Validate,
    /// Print the orthonormal polynomial basis.
    Teugels {
        #[arg(long, default_value_t = levy_switching::teugels::DEFAULT_N_MAX)]
        n_max: usize,
        /// Also write the table to this CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate state paths.
    Simulate {
        /// CSV destination; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve on the grid and write one CSV per mode plus diagnostics.
    Solve {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
    },
    /// Re-check value fields written by `solve`.
    Residual {
        #[arg(long)]
        fields: PathBuf,
    },
    /// Monte Carlo payoff of a strategy file or of the feedback rule of value fields.
    Evaluate {
        #[arg(long)]
        fields: Option<PathBuf>,
        /// CSV of `time, mode` switching events.
        #[arg(long)]
        strategy: Option<PathBuf>,
    },
    /// Solve the Markov chain surrogate by dynamic programming.
    Oracle {
        /// Explicit chain file instead of the one built from the configuration.
        #[arg(long)]
        chain: Option<PathBuf>,
        /// CSV destination for the values at the first time.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid solver, chain oracle and Monte Carlo on one configuration.
    Compare {
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        #[arg(long)]
        chain: Option<PathBuf>,
    },
}

/// Runs a parsed command line, writing reports to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let config = commands::load_config(path)?;
    match &cli.command {
        Command::Validate => commands::validate(&config, out),
        Command::Teugels { n_max, out: file } => commands::teugels(&config, *n_max, file.as_deref(), out),
        Command::Simulate { out: file } => commands::simulate(&config, file.as_deref(), out),
        Command::Solve { out: dir, scheme } => commands::solve(&config, scheme.map(Into::into), dir, out),
        Command::Residual { fields } => commands::residual(&config, fields, out),
        Command::Evaluate { fields, strategy } => commands::evaluate(&config, fields.as_deref(), strategy.as_deref(), out),
        Command::Oracle { chain, out: file } => commands::oracle(&config, chain.as_deref(), file.as_deref(), out),
        Command::Compare { scheme, chain } => commands::compare(&config, scheme.map(Into::into), chain.as_deref(), out),
    }
}
