//! Batch driver for marker, metric, purification and assembly experiments.
//!
//! Exit status: 0 when every checked invariant holds, 1 when one fails (the
//! report is still written), 2 for configuration and usage errors.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod output;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Parser)]
#[command(name = "strictform", version, about = "Markered array experiments with exact reports")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a marker system and check its structure.
    Markers {
        #[arg(long)]
        columns: usize,
        #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
        origin: i64,
        /// Gap sequence, e.g. `3,81`.
        #[arg(long, value_delimiter = ',', required = true)]
        gaps: Vec<u64>,
        /// Write the marker rows as `.mrk`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Truncated d* between two `.arr` or `.emp` operands.
    Dstar {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Truncation `LxRw`.
        #[arg(long)]
        trunc: String,
    },
    /// Run the purification pipeline.
    Purify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Build a stitch kit, embed fixtures and check convergence.
    Assemble {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the kit as `.kit`.
        #[arg(long)]
        kit: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check a report's verdict and, given the config, its hash.
    Verify {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Export the plot series of a report.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
}

/// Runs one command; `Ok(false)` means an invariant failed.
pub fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Markers {
            columns,
            origin,
            gaps,
            out,
        } => commands::markers(columns, origin, &gaps, out.as_deref()),
        Command::Dstar { a, b, trunc } => commands::dstar(&a, &b, &trunc),
        Command::Purify { config, out, csv } => commands::purify(&config, &out, csv.as_deref()),
        Command::Assemble { config, out, kit, csv } => commands::assemble(&config, &out, kit.as_deref(), csv.as_deref()),
        Command::Verify { report, config } => commands::verify(&report, config.as_deref()),
        Command::Report { report, csv } => commands::report(&report, &csv),
    }
}

/// Exit status for a finished run.
pub fn exit_code(result: &Result<bool, CliError>) -> i32 {
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(_) => 2,
    }
}
