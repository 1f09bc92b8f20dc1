//! Command-line driver for the `dsrl` binary: argument parsing, run
//! configuration and the `gen`, `train`, `eval` and `selftest` commands.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use dsrl::pipeline::Ablation;
use thiserror::Error;

pub use commands::{
    cmd_eval, cmd_gen, cmd_selftest, cmd_train, load_split, write_eval_outputs, EvalSummary, GenSummary,
    TrainLogFile, TrainSummary,
};
pub use config::{Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("self-test failed: {0}")]
    Selftest(String),
}

impl CliError {
    /// 1 for invalid input, 2 for runtime failures, 3 for failed self-tests.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
            Self::Selftest(_) => 3,
        }
    }
}

impl From<dsrl::Error> for CliError {
    fn from(e: dsrl::Error) -> Self {
        match e {
            dsrl::Error::Config(m) => Self::Validation(m),
            other => Self::Runtime(other.to_string()),
        }
    }
}

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "DSRL_THREADS";

/// Parses the thread cap; unset or empty means no cap.
pub fn parse_threads(value: Option<&str>) -> Result<Option<usize>, CliError> {
    match value.map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Validation(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

#[derive(Debug, Parser)]
#[command(name = "dsrl", version, about = "Dual-space representation learning for violence detection")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for both the generator and the model.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset and its manifest.
    Gen {
        /// Number of videos.
        #[arg(long)]
        videos: Option<usize>,
    },
    /// Train on the train split and write a checkpoint and training log.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        /// Videos per optimisation step.
        #[arg(long)]
        batch: Option<usize>,
        /// Component to remove or replace.
        #[arg(long, value_enum)]
        ablate: Option<AblateArg>,
    },
    /// Score the test split with a checkpoint.
    Eval {
        /// Checkpoint to read; defaults to `<out>/model.ckpt`.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Run the invariant, gradient and metric suites.
    Selftest {
        /// Break a component on purpose to show the suites catch it.
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
        /// Random draws per membership check.
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblateArg {
    None,
    EuclideanOnly,
    NoDsi,
    CosineDsi,
    FixedThreshold,
}

impl From<AblateArg> for Ablation {
    fn from(a: AblateArg) -> Self {
        match a {
            AblateArg::None => Ablation::None,
            AblateArg::EuclideanOnly => Ablation::EuclideanOnly,
            AblateArg::NoDsi => Ablation::NoDsi,
            AblateArg::CosineDsi => Ablation::CosineDsi,
            AblateArg::FixedThreshold => Ablation::FixedThreshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    /// Perturb every exp_map result off the hyperboloid.
    PerturbExpMap,
}

impl Cli {
    /// Command-line values that override the configuration file.
    pub fn overrides(&self) -> Overrides {
        let mut o = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            ..Overrides::default()
        };
        match &self.command {
            Command::Gen { videos } => o.videos = *videos,
            Command::Train { epochs, batch, ablate } => {
                o.epochs = *epochs;
                o.batch = *batch;
                o.ablate = ablate.map(Ablation::from);
            }
            Command::Eval { checkpoint } => o.checkpoint = checkpoint.clone(),
            Command::Selftest { .. } => {}
        }
        o
    }
}
