//! Command-line front end: train, eval, forecast, ablate, sweep.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use adapformer::Error;
use clap::{Args, Parser, Subcommand};
use config::CommonArgs;

#[derive(Parser)]
#[command(name = "adapformer", version, about = "Multivariate time-series forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model; writes checkpoint, report, history and predictions.
    Train(CommonArgs),
    /// Score a saved checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Forecast from a checkpoint and dump per-window predictions.
    Forecast(ForecastArgs),
    /// Train the component knockouts (full, no_ace, no_acf, no_aux, ci, cd).
    Ablate(CommonArgs),
    /// Grid search over learning rate, width, rank and group size.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by train.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input CSV; channel count must match the checkpoint.
    #[arg(long)]
    dataset: PathBuf,
    /// Split to score: train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Optional directory for report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Output directory for report.txt and predictions.csv.
    #[arg(long, default_value = "forecast")]
    out: PathBuf,
    /// Also write plot_data.csv with one prediction per timestamp.
    #[arg(long)]
    plot_data: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Learning rates to try, comma separated.
    #[arg(long = "sweep-lr", value_delimiter = ',')]
    sweep_lr: Vec<f64>,
    /// Model widths to try.
    #[arg(long = "sweep-d", value_delimiter = ',')]
    sweep_d: Vec<usize>,
    /// Enhancer ranks to try.
    #[arg(long = "sweep-rank", value_delimiter = ',')]
    sweep_rank: Vec<usize>,
    /// Group sizes to try.
    #[arg(long = "sweep-topk", value_delimiter = ',')]
    sweep_topk: Vec<usize>,
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(args) => commands::cmd_train(&config::resolve(&args)?),
        Command::Eval(a) => commands::cmd_eval(&a.checkpoint, &a.dataset, &a.split, a.out.as_deref()),
        Command::Forecast(a) => {
            commands::cmd_forecast(&a.checkpoint, &a.dataset, &a.split, &a.out, a.plot_data)
        }
        Command::Ablate(args) => commands::cmd_ablate(&config::resolve(&args)?),
        Command::Sweep(a) => commands::cmd_sweep(
            &config::resolve(&a.common)?,
            &a.sweep_lr,
            &a.sweep_d,
            &a.sweep_rank,
            &a.sweep_topk,
        ),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Load(_) | Error::Metric(_) => 3,
        Error::Numeric(_) => 4,
        Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
