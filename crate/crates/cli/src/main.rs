#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod commands;

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Class-imbalance experiments for multi-class rooftop segmentation.
#[derive(Parser)]
#[command(name = "roofseg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic imbalanced dataset to a directory.
    GenerateData(GenerateArgs),
    /// Build one epoch of oversampled batches and print it.
    Schedule(ScheduleArgs),
    /// Train one model and save its best checkpoint.
    Train(TrainArgs),
    /// Score a saved model on a dataset.
    Evaluate(EvaluateArgs),
    /// Train every configuration of the ablation grid.
    Ablate(AblateArgs),
    /// Train binary networks for one class with and without the auxiliary head.
    SingleClass(SingleClassArgs),
    /// Average Dice loss of degenerate predictors over mostly empty batches.
    AnalyzeDice(AnalyzeDiceArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// JSON file with an `ImbalanceProfile`; defaults to the rooftop damage
    /// statistics.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// JSON file with a `SyntheticStyle`.
    #[arg(long)]
    style: Option<PathBuf>,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the plan here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Options shared by the training subcommands.
#[derive(Args)]
struct TrainingOptions {
    /// JSON training config; defaults to the desk-scale settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Override the number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the iterations per epoch.
    #[arg(long)]
    iterations: Option<usize>,
    /// Override the seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    opts: TrainingOptions,
    /// Directory for the checkpoint, config and CSV outputs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Also write the normalized confusion table here.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    opts: TrainingOptions,
    /// Number of seeds per configuration; the median is reported.
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    /// Comma-separated model numbers of the default grid (all by default).
    #[arg(long, value_delimiter = ',')]
    models: Vec<usize>,
    /// Write the summary CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write every individual run here.
    #[arg(long)]
    runs: Option<PathBuf>,
}

#[derive(Args)]
struct SingleClassArgs {
    #[command(flatten)]
    opts: TrainingOptions,
    /// Foreground class to learn.
    #[arg(long = "class")]
    class_id: usize,
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeDiceArgs {
    /// Comma-separated batch counts k (one batch in k has foreground).
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 5, 10, 50])]
    k: Vec<usize>,
    /// Pixels per simulated batch.
    #[arg(long, default_value_t = 4096)]
    pixels: usize,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
}

fn run(command: Command, out: &mut dyn Write) -> anyhow::Result<()> {
    match command {
        Command::GenerateData(a) => commands::generate(a, out),
        Command::Schedule(a) => commands::schedule(a, out),
        Command::Train(a) => commands::train(a, out),
        Command::Evaluate(a) => commands::evaluate(a, out),
        Command::Ablate(a) => commands::ablate(a, out),
        Command::SingleClass(a) => commands::single_class(a, out),
        Command::AnalyzeDice(a) => commands::analyze_dice(a, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(cli.command, &mut io::stdout().lock()).and_then(|()| Ok(io::stdout().flush()?));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests;
