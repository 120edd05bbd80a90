//! Command-line front end: config parsing, returns ingestion, experiment
//! dispatch and report files.

pub mod archive;
pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod manifest;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_diagnose, cmd_fit_aux, cmd_run, RunOptions};
use crate::config::Overrides;

pub const THREADS_ENV: &str = "RABC_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "rabc",
    version,
    about = "Robust approximate Bayesian computation experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment described by a TOML config.
    Run(RunArgs),
    /// Rebuild the compatibility report and acceptance curve from an archive.
    Diagnose(DiagnoseArgs),
    /// Fit the GARCH(1,1)-t auxiliary model to a returns CSV.
    FitAux(FitAuxArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override `root_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override `n_draws`.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Override `accept_quantile`.
    #[arg(long)]
    pub quantile: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Returns CSV for `alpha_sv` experiments; simulated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Archive written by a run with `archive = true`.
    #[arg(long)]
    pub archive: PathBuf,
    #[arg(long, default_value = "diagnose")]
    pub out_dir: PathBuf,
    /// KS threshold for flagging.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Steps in the acceptance-curve quantile grid.
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct FitAuxArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Executes a parsed command line and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let res = match cli.command {
        Command::Run(a) => cmd_run(&RunOptions {
            config: a.config,
            overrides: Overrides {
                seed: a.seed,
                draws: a.draws,
                quantile: a.quantile,
            },
            threads: a.threads,
            out_dir: a.out_dir,
            data: a.data,
        }),
        Command::Diagnose(a) => cmd_diagnose(&a.archive, &a.out_dir, a.threshold, a.grid),
        Command::FitAux(a) => cmd_fit_aux(&a.data, a.out_dir.as_deref()),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
