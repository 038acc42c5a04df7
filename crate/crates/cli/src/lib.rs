//! Batch command-line front end: train, predict, evaluate and grid export.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod model_file;
pub mod schema;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{Axis, PredictFlags, Sampling};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "svgp", version, about = "Sparse variational GP models from the command line")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    /// Monte Carlo samples for deep GP predictions.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Seed for Monte Carlo predictions.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SamplingArgs {
    fn get(&self) -> Sampling {
        Sampling { samples: self.samples.max(1), seed: self.seed }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
        /// Trace file; defaults to `<out>.trace.jsonl`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Predictive means and variances at the inputs of a data file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Covariance tensor file; defaults to `<out>.cov`.
        #[arg(long)]
        cov_out: Option<PathBuf>,
        /// Covariance across data points.
        #[arg(long)]
        full_cov: bool,
        /// Covariance across outputs.
        #[arg(long)]
        full_output_cov: bool,
        /// Predict observations rather than the latent function.
        #[arg(long)]
        observation_noise: bool,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Mean log predictive density and RMSE on a data file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Metrics file; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Posterior mean and two-standard-deviation band on a grid.
    Plotdata {
        #[arg(long)]
        model: PathBuf,
        /// `min:max:steps`, once per input dimension (at most two).
        #[arg(long, required = true, num_args = 1, allow_hyphen_values = true, action = clap::ArgAction::Append)]
        grid: Vec<Axis>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        observation_noise: bool,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, data, out, trace } => commands::cmd_train(&config, &data, &out, trace.as_deref()),
        Command::Predict { model, data, out, cov_out, full_cov, full_output_cov, observation_noise, sampling } => {
            let flags = PredictFlags { full_cov, full_output_cov, observation_noise, sampling: sampling.get() };
            commands::cmd_predict(&model, &data, &out, cov_out.as_deref(), &flags)
        }
        Command::Eval { model, data, out, sampling } => commands::cmd_eval(&model, &data, out.as_deref(), sampling.get()),
        Command::Plotdata { model, grid, out, observation_noise, sampling } => {
            let flags = PredictFlags { observation_noise, sampling: sampling.get(), ..PredictFlags::default() };
            commands::cmd_plotdata(&model, &grid, &out, &flags)
        }
    }
}
