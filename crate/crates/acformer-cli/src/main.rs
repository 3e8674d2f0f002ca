//! `acformer` — train, evaluate and analyze the forecasting model, and run
//! the synthetic residual-extraction study.

mod commands;
mod config_file;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use acformer_core::model::Ablation;
use clap::{Parser, Subcommand};
use commands::AnalyzeMode;

#[derive(Parser)]
#[command(name = "acformer", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a CSV dataset and evaluate on its test split.
    Train {
        /// Flat key = value configuration file.
        #[arg(long)]
        config: PathBuf,
        /// CSV with a leading timestamp column.
        #[arg(long)]
        data: PathBuf,
        /// Output directory (manifest, checkpoint, report).
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Model variant to train.
        #[arg(long, default_value = "none")]
        ablation: Ablation,
    },
    /// Evaluate a checkpoint on a dataset's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// train:val:test proportions used to locate the test split.
        #[arg(long, default_value = "6:2:2")]
        split_ratio: String,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Run the five-variant synthetic residual-extraction study.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gradient and attention analyses of a trained model.
    Analyze {
        /// Required for every mode except `corr`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: AnalyzeMode,
        #[arg(long)]
        out: PathBuf,
        /// Input windows aggregated by the gradient analyses.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value = "6:2:2")]
        split_ratio: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            data,
            out,
            seed,
            ablation,
        } => commands::cmd_train(&config, &data, &out, seed, ablation),
        Command::Eval {
            checkpoint,
            data,
            out,
            split_ratio,
            batch_size,
        } => commands::cmd_eval(&checkpoint, &data, &out, &split_ratio, batch_size),
        Command::Synth { seed, out } => commands::cmd_synth(seed, &out),
        Command::Analyze {
            checkpoint,
            data,
            mode,
            out,
            samples,
            split_ratio,
        } => commands::cmd_analyze(
            checkpoint.as_deref(),
            &data,
            mode,
            &out,
            samples,
            &split_ratio,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
