//! The `dpn` command: data generation, training, evaluation and simplex
//! rendering on top of `dpn-core`.

mod commands;
pub mod manifest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::run;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] dpn_core::Error),
}

impl CliError {
    /// 0 success, 1 usage or configuration error, 2 numeric failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(dpn_core::Error::Divergence { .. } | dpn_core::Error::NonFinite(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dpn",
    version,
    about = "Dirichlet prior network experiments on synthetic data"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for data generation and training, overriding the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,

    /// Number of seeded runs for `eval` without checkpoints (seeds seed, seed+1, ...).
    #[arg(long, global = true)]
    pub runs: Option<usize>,
}

impl GlobalArgs {
    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("--out <dir> is required".into()))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the in-domain and OOD splits as CSV files.
    GenData,

    /// Train the Dirichlet network (or the binary baseline) on generated data.
    Train {
        /// Directory holding train_id.csv and train_ood.csv.
        #[arg(long)]
        data: PathBuf,

        /// Train the in-domain vs OOD binary classifier instead.
        #[arg(long)]
        baseline: bool,
    },

    /// Evaluate checkpoints, or run the whole pipeline for `--runs` seeds.
    Eval {
        /// Dirichlet network checkpoint.
        #[arg(long, requires_all = ["baseline_model", "data"])]
        model: Option<PathBuf>,

        /// Binary baseline checkpoint.
        #[arg(long, requires = "model")]
        baseline_model: Option<PathBuf>,

        /// Directory holding holdout_id.csv, holdout_ood.csv and unseen_ood.csv.
        #[arg(long, requires = "model")]
        data: Option<PathBuf>,
    },

    /// Render a 3-class Dirichlet density over the simplex.
    SimplexRender {
        /// Concentrations, comma separated.
        #[arg(
            long,
            value_delimiter = ',',
            required_unless_present = "model",
            conflicts_with = "model"
        )]
        alphas: Option<Vec<f64>>,

        /// Checkpoint whose logits on `--sample` define the Dirichlet.
        #[arg(long, requires = "sample")]
        model: Option<PathBuf>,

        /// Input features, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        sample: Option<Vec<f64>>,

        /// Image width in pixels and lattice resolution.
        #[arg(long, default_value_t = 256)]
        resolution: usize,
    },
}
