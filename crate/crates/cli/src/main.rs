//! `adbcr`: generate synthetic data, train and search estimators, evaluate
//! checkpoints.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adbcr", version, about = "Adversarial distribution balancing for counterfactual reasoning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset with known potential outcomes.
    Generate(GenerateArgs),
    /// Train one estimator and report its effect metrics.
    Train(TrainArgs),
    /// Random search over hyper-parameters, selecting on the validation split.
    Search(SearchArgs),
    /// Evaluate a saved checkpoint on a dataset.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Logit scale of the treatment assignment.
    #[arg(long)]
    pub bias: Option<f64>,
    #[arg(long)]
    pub heterogeneity: Option<f64>,
    #[arg(long)]
    pub base_effect: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// linear, quadratic or exp.
    #[arg(long)]
    pub nonlinearity: Option<String>,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.63,0.27,0.10")]
    pub fractions: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// key=value file with the fields above.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Options shared by the commands that fit models.
#[derive(Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Split fractions used when the file has no split column.
    #[arg(long, default_value = "0.63,0.27,0.10")]
    pub fractions: String,
    /// Move the covariates of these rows into the unlabeled pool.
    #[arg(long, value_enum, default_value = "none")]
    pub unlabeled: Unlabeled,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Unlabeled {
    None,
    Test,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// adbcr, uadbcr, a-tarnet, danncr, s-lasso or t-lasso.
    #[arg(long, default_value = "adbcr")]
    pub mode: String,
    /// key=value training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration entry; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "adbcr")]
    pub mode: String,
    /// Base configuration; searched entries are replaced per run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// key=value search space; the default covers the standard ranges.
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// Random draws per architecture.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Runs trained in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "0.63,0.27,0.10")]
    pub fractions: String,
    /// Seed of the split applied when the file has no split column.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write report.json and manifest.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a, &argv),
        Command::Train(a) => commands::train(a, &argv),
        Command::Search(a) => commands::search(a, &argv),
        Command::Eval(a) => commands::eval(a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
