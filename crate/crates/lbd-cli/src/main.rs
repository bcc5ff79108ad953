//! Experiment runner: split, train, evaluate, targeted recommendation, and
//! hyperparameter sweeps over the rating-prediction models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Overrides;

#[derive(Parser)]
#[command(
    name = "lbd",
    about = "Beta-distribution rating prediction with confidence: experiments end to end",
    version
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the rating log and write k-fold split manifests.
    Split,
    /// Train one model on one fold and write its checkpoint, history, and
    /// run metadata.
    Train {
        /// Fold to train on.
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Trained MF checkpoint that initializes CMF.
        #[arg(long)]
        init_from: Option<PathBuf>,
        /// Write the checkpoint as JSON instead of the binary format.
        #[arg(long)]
        json_checkpoint: bool,
    },
    /// Evaluate a checkpoint on a fold: metric report plus variance-binned
    /// profile CSVs.
    Evaluate {
        /// Checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Variance bins per profile.
        #[arg(long, default_value_t = 1000)]
        bins: usize,
        /// Fraction of highest-variance records discarded from profiles.
        #[arg(long, default_value_t = 0.001)]
        outlier_frac: f64,
        /// Ranking cutoffs, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [3usize, 10])]
        ndcg_k: Vec<usize>,
        /// Use exponential (2^rating - 1) NDCG gain instead of linear.
        #[arg(long)]
        exponential_gain: bool,
        /// Skip the profile CSVs.
        #[arg(long)]
        no_profiles: bool,
    },
    /// Rank per-user recommendations by success probability and report
    /// Precision@1 over budgets of targeted users.
    Targeted {
        /// One or more checkpoints; including MF fills the relative-gain
        /// column for the others.
        #[arg(long, value_delimiter = ',', required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Budgets N, comma separated; defaults to half-powers of ten up to
        /// the eligible-user cap.
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
        /// Success threshold on the rating value.
        #[arg(long, default_value_t = lbd::targeted::DEFAULT_SUCCESS_THRESHOLD)]
        threshold: f64,
    },
    /// Train a grid of hyperparameters on fold 0 and rank them by
    /// validation RMSE.
    Sweep {
        /// Learning-rate grid, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [1e-3])]
        lr_grid: Vec<f64>,
        /// L2-weight grid, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [1e-6])]
        l2_grid: Vec<f64>,
        /// Embedding-dimension grid, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [512usize])]
        dim_grid: Vec<usize>,
        /// Trained MF checkpoint that initializes CMF grid points.
        #[arg(long)]
        init_from: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.overrides.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.overrides.threads)
            .build_global()
            .ok();
    }
    let config = cli.overrides.resolve()?;
    match cli.command {
        Command::Split => commands::cmd_split(&config),
        Command::Train { fold, init_from, json_checkpoint } => {
            commands::cmd_train(&config, fold, init_from.as_deref(), json_checkpoint)
        }
        Command::Evaluate {
            checkpoint,
            fold,
            bins,
            outlier_frac,
            ndcg_k,
            exponential_gain,
            no_profiles,
        } => commands::cmd_evaluate(
            &config,
            &checkpoint,
            fold,
            bins,
            outlier_frac,
            &ndcg_k,
            exponential_gain,
            no_profiles,
        ),
        Command::Targeted { checkpoints, fold, n_grid, threshold } => {
            commands::cmd_targeted(&config, &checkpoints, fold, n_grid.as_deref(), threshold)
        }
        Command::Sweep { lr_grid, l2_grid, dim_grid, init_from } => {
            commands::cmd_sweep(&config, &lr_grid, &l2_grid, &dim_grid, init_from.as_deref())
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    // Runtime/numeric failures exit 1; input and contract violations exit 2.
    match err.downcast_ref::<lbd::Error>() {
        Some(lbd::Error::Diverged { .. })
        | Some(lbd::Error::NoConvergence { .. })
        | Some(lbd::Error::UndefinedCorrelation(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
