//! `atp` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or fatal error, 2 partial failure,
//! 3 resource refusal, 4 check failure.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::linalg::{RankPolicy, DEFAULT_INNER_ITERS};
use crate::scalar::Dtype;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_REFUSED: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "atp", version, about = "Low-rank self-attention toolkit")]
pub struct Cli {
    /// Seed for every random draw of the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Element precision for computation (bench) and written matrices.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    /// Output file (reports, matrices) or directory (decompose, synth).
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

impl From<Precision> for Dtype {
    fn from(p: Precision) -> Self {
        match p {
            Precision::F32 => Dtype::F32,
            Precision::F64 => Dtype::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Exact,
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttendMode {
    Standard,
    Lowrank,
    Oracle,
}

/// Rank policy flags; at most one may be given.
#[derive(Debug, Clone, Args)]
#[group(multiple = false)]
pub struct RankFlags {
    /// Keep exactly this many components.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Keep `ceil(f * L)` components.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Keep `ceil(scale * 2^mu)` components.
    #[arg(long = "entropy-scale")]
    pub entropy_scale: Option<f64>,
}

impl RankFlags {
    pub fn policy(&self) -> Option<RankPolicy> {
        self.rank
            .map(RankPolicy::Fixed)
            .or(self.fraction.map(RankPolicy::Fraction))
            .or(self.entropy_scale.map(RankPolicy::Entropy))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Entropy-based low-rankness profile of a corpus manifest.
    Profile {
        manifest: PathBuf,
        /// Histogram bins per length bucket.
        #[arg(long, default_value_t = crate::analysis::DEFAULT_BINS)]
        bins: usize,
        /// Length buckets overriding the manifest, e.g. `0-300,301-600`.
        #[arg(long)]
        buckets: Option<String>,
    },
    /// Factorize a matrix into `U` and `Xp`.
    Decompose {
        input: PathBuf,
        #[command(flatten)]
        rank: RankFlags,
        #[arg(long, value_enum, default_value_t = Method::Alternating)]
        method: Method,
        /// Orthonormalize `U` after alternating fitting.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        reorthogonalize: bool,
        #[arg(long, default_value_t = DEFAULT_INNER_ITERS)]
        inner_iters: usize,
    },
    /// Multi-head attention of a sequence with a layer bundle's weights.
    Attend {
        x: PathBuf,
        weights_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = AttendMode::Lowrank)]
        mode: AttendMode,
        /// Run all three modes and report their discrepancies.
        #[arg(long)]
        compare: bool,
        #[command(flatten)]
        rank: RankFlags,
    },
    /// Operation-count and wall-clock scaling sweep.
    Bench {
        /// Comma-separated ascending sequence lengths.
        #[arg(long, value_delimiter = ',', default_values_t = crate::bench::DEFAULT_LENGTHS.to_vec())]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = crate::bench::DEFAULT_RANK)]
        rank: usize,
        /// Model and attention widths `d,d'`.
        #[arg(long, value_delimiter = ',', num_args = 1, default_values_t = vec![crate::bench::DEFAULT_DIM, crate::bench::DEFAULT_HIDDEN])]
        dims: Vec<usize>,
        #[arg(long, default_value_t = crate::bench::DEFAULT_REPEATS)]
        repeats: usize,
        #[arg(long, default_value_t = DEFAULT_INNER_ITERS)]
        inner_iters: usize,
        /// Run sweep points in parallel (timings become less stable).
        #[arg(long)]
        parallel: bool,
    },
    /// Compare analytic and finite-difference derivatives of the low-rank kernel.
    Gradcheck {
        /// Comma-separated `LxRxH` sizes (length, rank, head width).
        #[arg(long, default_value = "8x2x4,16x4x8,32x8x8")]
        sizes: String,
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
    /// Write a seeded synthetic low-rank-plus-noise corpus.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        length: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        intrinsic_rank: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Also write a random layer bundle of matching width here.
        #[arg(long)]
        layer: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        heads: usize,
    },
}

/// Outcome of a command that did not fully succeed.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Partial(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_FATAL,
            CliError::Core(Error::ResourceRefused { .. }) => EXIT_REFUSED,
            CliError::Core(_) => EXIT_FATAL,
            CliError::Partial(_) => EXIT_PARTIAL,
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
        }
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FATAL } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("atp: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}
