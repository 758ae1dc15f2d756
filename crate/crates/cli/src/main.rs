//! Batch command-line front end for the calibration and simulation pipeline.
//!
//! Subcommands: `ingest`, `calibrate-pdv`, `fit-ssvi`, `fit-joint`,
//! `simulate`, `validate`. Every command is deterministic given its inputs,
//! flags and seed, and independent of the worker count. Exit codes:
//! 0 success, 1 validation error, 2 numerical/convergence error, 3 I/O error.

mod commands;
mod config;

use clap::{Parser, Subcommand};

use crate::config::{CommonArgs, RunConfig};

#[derive(Parser)]
#[command(name = "ivsim", version, about = "Joint index / implied-vol-surface calibration and scenario generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, validate and calendar-arbitrage-filter a price + IVS panel.
    Ingest(CommonArgs),
    /// Calibrate the feature regression on per-maturity ATM vols.
    CalibratePdv(CommonArgs),
    /// Daily surface calibration over every panel date.
    FitSsvi(CommonArgs),
    /// Full joint-model calibration from a panel.
    FitJoint(CommonArgs),
    /// Monte Carlo simulation of surface paths from a parameter file.
    Simulate(CommonArgs),
    /// Diagnostics: PCA, envelopes, lag correlations, joint-density export.
    Validate(CommonArgs),
}

fn main() {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Ingest(a) => ("ingest", a),
        Command::CalibratePdv(a) => ("calibrate-pdv", a),
        Command::FitSsvi(a) => ("fit-ssvi", a),
        Command::FitJoint(a) => ("fit-joint", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Validate(a) => ("validate", a),
    };

    let run = || -> ivsim::Result<()> {
        let config = RunConfig::resolve(name, args)?;
        config.apply_thread_pool();
        config.echo_effective()?;
        match name {
            "ingest" => commands::cmd_ingest(&config),
            "calibrate-pdv" => commands::cmd_calibrate_pdv(&config),
            "fit-ssvi" => commands::cmd_fit_ssvi(&config),
            "fit-joint" => commands::cmd_fit_joint(&config),
            "simulate" => commands::cmd_simulate(&config),
            "validate" => commands::cmd_validate(&config),
            _ => unreachable!(),
        }
    };

    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
