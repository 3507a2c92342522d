//! The `cascade-lab` command line.
//!
//! Every subcommand reads a JSON model, writes a [`RunManifest`] into the
//! output directory before anything else, and stamps each artifact with the
//! manifest id.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use manifest::{fmt_f64, sha256_hex, RunDir, RunManifest, MANIFEST_FILE};

use crate::error::Error;

/// Exit status of `check` when something is merely suspicious.
pub const EXIT_WARNINGS: i32 = 2;
/// Exit status of `check` (and of gated commands) when the model fails.
pub const EXIT_CHECK_FAILED: i32 = 3;
pub const EXIT_MALFORMED: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "cascade-lab", version, about = "Spectral analysis, simulation and tail estimation for matrix cascades")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON model file.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Direction grid resolution; defaults depend on the dimension.
    #[arg(long, value_name = "RES")]
    pub grid: Option<usize>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_name = "INT", env = "CASCADE_LAB_WORKERS")]
    pub workers: Option<usize>,
    /// Run even when the model fails `check`.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a model and report on the hypotheses.
    Check {
        #[command(flatten)]
        common: Common,
    },
    /// κ-curve, eigenfunctions and the tail exponent χ.
    Spectral {
        #[command(flatten)]
        common: Common,
        /// Comma-separated exponents.
        #[arg(long = "s", value_name = "LIST", value_delimiter = ',', allow_hyphen_values = true)]
        s: Vec<f64>,
        /// Also solve κ(χ)·E[N] = 1.
        #[arg(long)]
        chi: bool,
        /// Rescale the atoms so that r(m)·E[N] = 1 first.
        #[arg(long)]
        calibrate: bool,
    },
    /// Exact cascade martingale on random trees.
    Cascade {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        depth: usize,
        #[arg(long, default_value_t = 10_000)]
        replicas: usize,
        #[arg(long)]
        calibrate: bool,
    },
    /// Population-dynamics pool for the fixed point.
    Fixpoint {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100_000)]
        pool_size: usize,
        #[arg(long, default_value_t = 60)]
        generations: usize,
        /// Exponents for the moment probe.
        #[arg(long = "s", value_name = "LIST", value_delimiter = ',')]
        s: Vec<f64>,
        #[arg(long)]
        calibrate: bool,
    },
    /// Tail index, tail constants and harmonicity from a pool snapshot.
    Tail {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        pool: PathBuf,
        /// `auto`, or directions separated by `;` with comma-separated coordinates.
        #[arg(long, value_name = "LIST|auto", default_value = "auto")]
        directions: String,
        #[arg(long)]
        calibrate: bool,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Self::Check { common }
            | Self::Spectral { common, .. }
            | Self::Cascade { common, .. }
            | Self::Fixpoint { common, .. }
            | Self::Tail { common, .. } => common,
        }
    }
}

/// Process exit status for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidModel { .. }
        | Error::Json(_)
        | Error::MalformedSnapshot(_)
        | Error::Io(_)
        | Error::DimensionMismatch { .. }
        | Error::DimensionUnsupported(_)
        | Error::ResolutionTooSmall(_)
        | Error::ZeroVector
        | Error::InteriorRequired => EXIT_MALFORMED,
        Error::NoRoot { .. } => 4,
        Error::WorkCapExceeded(_) => 5,
        Error::NoConvergence { .. } => 6,
        Error::PoolTooSmall { .. } => 7,
        Error::NonConstantBranching => 8,
        Error::NotCalibrated(_) => 10,
        Error::NonPositiveEigenfunction { .. } | Error::ZeroImage { .. } => 11,
        Error::DegenerateTail => 12,
        _ => 9,
    }
}

/// A failed invocation: exit status and message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_MALFORMED, message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::new(exit_code(&e), e.to_string())
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_MALFORMED } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(command: &Command) -> Result<i32, Failure> {
    let workers = match command.common().workers {
        Some(0) => return Err(Failure::usage("--workers must be positive")),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, usize::from),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::new(9, format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| commands::dispatch(command, workers))
}
