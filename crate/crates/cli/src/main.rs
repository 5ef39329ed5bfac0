//! `quadspin` command-line driver.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numeric
//! failure, 4 data that does not match the requested model.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Schema(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Schema(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Schema(m) => write!(f, "data error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<quadspin::Error> for CliError {
    fn from(e: quadspin::Error) -> Self {
        CliError::Numeric(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "quadspin", version, about = "Quadrupolar donor nuclear spin simulation and fitting")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment description (.qsx).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Seed for any resampling; recorded in the manifest.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Data format; defaults to the config's `[output] format`.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// ENDOR spectra for every ionization target.
    Spectrum,
    /// Transition shifts over the config's `[sweep]` range.
    Sweep,
    /// CPMG coherence decay and the T2 scaling with pulse count.
    Decay,
    /// Fit a model to data files.
    Fit(commands::FitArgs),
    /// Outer-line shift expected for an applied strain.
    Forecast {
        /// Strain magnitude along the config's forecast geometry.
        #[arg(long, default_value_t = 5e-5, allow_negative_numbers = true)]
        strain: f64,
    },
}

fn configure_threads() {
    if let Ok(v) = std::env::var("QSX_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring QSX_THREADS={v:?}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let result = match &cli.command {
        Command::Spectrum => commands::spectrum(&cli.common),
        Command::Sweep => commands::sweep(&cli.common),
        Command::Decay => commands::decay(&cli.common),
        Command::Fit(args) => commands::fit(&cli.common, args),
        Command::Forecast { strain } => commands::forecast(&cli.common, *strain),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("quadspin: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
