//! Command-line front end for training, evaluating, and verifying low-rank
//! bilinear link-prediction models.
//!
//! Exit codes: 0 on success, 1 on runtime or verification failure, 2 on
//! usage or configuration errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "lowfer",
    version,
    about = "Train, evaluate, and verify low-rank bilinear link-prediction models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes checkpoint.lfer and history.json.
    Train(TrainArgs),
    /// Evaluate a checkpoint; writes and prints report.json.
    Evaluate(EvaluateArgs),
    /// Run self-verification suites; exit 1 if any case fails.
    Verify(VerifyArgs),
    /// Print the exact parameter count and its 0.1M rounding.
    ParamCount(ParamCountArgs),
    /// Train and evaluate over a grid of rank and widths; writes sweep.csv.
    Sweep(SweepArgs),
    /// Noise-robustness probe of a checkpoint; writes perturb.csv.
    Perturb(PerturbArgs),
}

/// Flags shared by every command.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Named hyperparameter bundle: wn18, wn18rr, fb15k, or fb15k-237.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
    /// Seed for initialization, shuffling, dropout, and noise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker pool size; 1 (the default) runs sequentially.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Model and optimizer tunables, overriding preset and config-file values.
#[derive(Debug, Args)]
pub struct TrainOverrides {
    /// Entity embedding width.
    #[arg(long)]
    pub entity_dim: Option<usize>,
    /// Relation embedding width.
    #[arg(long)]
    pub relation_dim: Option<usize>,
    /// Factorization rank (pooling window size).
    #[arg(long)]
    pub rank: Option<usize>,
    /// Dropout on subject embeddings.
    #[arg(long)]
    pub dropout_entity: Option<f64>,
    /// Dropout on the fused projection product.
    #[arg(long)]
    pub dropout_fusion: Option<f64>,
    /// Dropout on the pooled output.
    #[arg(long)]
    pub dropout_output: Option<f64>,
    /// Mass moved from positive labels toward uniform.
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    /// Signed square root plus unit-norm scaling before pooling.
    #[arg(long, value_name = "BOOL")]
    pub power_l2_normalize: Option<bool>,
    /// Squash the final representation through tanh.
    #[arg(long, value_name = "BOOL")]
    pub tanh_output: Option<bool>,
    /// Base learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Per-epoch multiplicative learning-rate decay.
    #[arg(long)]
    pub decay_rate: Option<f64>,
    /// Coefficient of the squared-norm penalty.
    #[arg(long)]
    pub l2_lambda: Option<f64>,
    /// Number of training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Keys per training batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Validation cadence in epochs; 0 disables validation.
    #[arg(long)]
    pub eval_every: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
        }
        set!(entity_dim);
        set!(relation_dim);
        set!(rank);
        set!(dropout_entity);
        set!(dropout_fusion);
        set!(dropout_output);
        set!(label_smoothing);
        set!(power_l2_normalize);
        set!(tanh_output);
        set!(learning_rate);
        set!(decay_rate);
        set!(l2_lambda);
        set!(epochs);
        set!(batch_size);
        set!(eval_every);
    }
}

/// Width and rank overrides for the parameter-count command.
#[derive(Debug, Args)]
pub struct DimOverrides {
    /// Entity embedding width.
    #[arg(long)]
    pub entity_dim: Option<usize>,
    /// Relation embedding width.
    #[arg(long)]
    pub relation_dim: Option<usize>,
    /// Factorization rank (pooling window size).
    #[arg(long)]
    pub rank: Option<usize>,
}

impl DimOverrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.entity_dim {
            cfg.entity_dim = v;
        }
        if let Some(v) = self.relation_dim {
            cfg.relation_dim = v;
        }
        if let Some(v) = self.rank {
            cfg.rank = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset directory with train.txt, valid.txt, and test.txt.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint written by the train command.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Dataset directory with train.txt, valid.txt, and test.txt.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Split to rank: train, valid, or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Additionally break the report down by relation label.
    #[arg(long)]
    pub per_relation: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Suite to run: all, prop1, prop2, bilinear, hyper, gradcheck, or
    /// equivalence.
    #[arg(long, default_value = "all")]
    pub suite: String,
}

#[derive(Debug, Args)]
pub struct ParamCountArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of entities; with --relations, replaces --data.
    #[arg(long)]
    pub entities: Option<u64>,
    /// Number of raw relations (before reciprocals).
    #[arg(long)]
    pub relations: Option<u64>,
    /// Dataset directory to derive the counts from instead.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Count the doubled relation table used by reciprocal training.
    #[arg(long)]
    pub include_reciprocals: bool,
    #[command(flatten)]
    pub overrides: DimOverrides,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset directory with train.txt, valid.txt, and test.txt.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Ranks to sweep, comma separated (defaults to the resolved rank).
    #[arg(long, value_delimiter = ',', value_name = "K,...")]
    pub ks: Vec<usize>,
    /// Entity widths to sweep, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "D,...")]
    pub entity_dims: Vec<usize>,
    /// Relation widths to sweep, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "D,...")]
    pub relation_dims: Vec<usize>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint written by the train command.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Dataset directory with train.txt, valid.txt, and test.txt.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Gaussian noise variances to probe, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0, 2.0], value_name = "V,...")]
    pub sigmas: Vec<f64>,
    /// Number of consecutive seeds to run, starting at --seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(args) => commands::cmd_train(args),
        Command::Evaluate(args) => commands::cmd_evaluate(args),
        Command::Verify(args) => commands::cmd_verify(args),
        Command::ParamCount(args) => commands::cmd_param_count(args),
        Command::Sweep(args) => commands::cmd_sweep(args),
        Command::Perturb(args) => commands::cmd_perturb(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}
