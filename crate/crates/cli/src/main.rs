//! `qpmforge`: batch front-end for crystal design, biphoton simulation,
//! interference sweeps, time-of-flight spectroscopy and tomography.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use crate::commands::Command;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    Design,
    Simulate,
    Hom,
    Heralded,
    TofsSim,
    TofsAnalyze,
    TomoSim,
    TomoFit,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Design => Command::Design,
            Sub::Simulate => Command::Simulate,
            Sub::Hom => Command::Hom,
            Sub::Heralded => Command::Heralded,
            Sub::TofsSim => Command::TofsSim,
            Sub::TofsAnalyze => Command::TofsAnalyze,
            Sub::TomoSim => Command::TomoSim,
            Sub::TomoFit => Command::TomoFit,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qpmforge", version, about)]
struct Args {
    #[arg(value_enum)]
    command: Sub,
    /// Run configuration (sectioned key = value text).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores. Overrides run.threads.
    #[arg(long)]
    threads: Option<usize>,
}

fn run(args: Args) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?.with_overrides(args.seed, args.threads);
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    commands::run(args.command.into(), &cfg, &args.out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors, matching config errors.
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qpmforge: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
