//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a check or certification fails, 2 for
//! configuration errors. Outputs go under `--out`, else `$MBPETC_OUT`, else
//! `./out`.

pub mod benchmark;
mod commands;
pub mod spec;

use std::ffi::OsString;
use std::io;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::certificates::CertError;
use crate::prediction::PredictionError;
use crate::simulator::SimError;

pub use commands::{cmd_accept, cmd_certify, cmd_run, RunOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "MBPETC_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{origin}: {message}")]
    Spec { origin: String, message: String },
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Prediction(#[from] PredictionError),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("{0}")]
    ChecksFailed(String),
}

impl CliError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(io::Error) -> Self {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ChecksFailed(_) => EXIT_CHECK_FAILED,
            CliError::Cert(
                CertError::AssumptionViolated { .. }
                | CertError::NonFinite { .. }
                | CertError::NonPositiveRate(_)
                | CertError::EmptyLevelSet,
            ) => EXIT_CHECK_FAILED,
            CliError::Sim(
                SimError::Escaped { .. }
                | SimError::Feedback { .. }
                | SimError::Trigger(_)
                | SimError::MirrorMismatch { .. },
            ) => EXIT_CHECK_FAILED,
            _ => EXIT_CONFIG,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mbpetc", version, about = "Model-based periodic event-triggered control toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the level-set constants and the certified sampling period
    Certify(CertifyArgs),
    /// Run the scenarios of a spec and check every trace
    Run(RunArgs),
    /// Run a spec and print the comparison table of its scenarios
    Compare(RunArgs),
    /// Run the acceptance battery
    Accept(AcceptArgs),
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    /// Registered model name
    #[arg(value_name = "MODEL")]
    pub model_name: Option<String>,
    #[arg(long, conflicts_with = "model_name")]
    pub model: Option<String>,
    /// Level c of the operating region
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Grid points per axis
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Spec file, or the name of a bundled spec
    #[arg(long)]
    pub spec: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Allow sampling periods above the certified bound
    #[arg(long)]
    pub unsafe_h_override: bool,
}

#[derive(Debug, Args)]
pub struct AcceptArgs {
    /// Criteria to run, e.g. `--only A1,A3`
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use this constants manifest instead of certifying
    #[arg(long)]
    pub constants: Option<PathBuf>,
}

/// Output root: the flag, else the environment, else `out`.
pub fn output_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Certify(args) => {
            let model = args.model.or(args.model_name).unwrap_or_else(|| "pendulum".into());
            cmd_certify(&model, args.c, args.sigma, args.grid, &output_root(args.out)).map(|_| ())
        }
        Command::Run(args) => cmd_run(&RunOptions::from_args(args, false)),
        Command::Compare(args) => cmd_run(&RunOptions::from_args(args, true)),
        Command::Accept(args) => cmd_accept(&args.only, &output_root(args.out), args.constants.as_deref()),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
