//! `skelrefine`: corpus synthesis, training, refinement and evaluation.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Stage;
use config::PipelineConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "skelrefine", version, about = "Refine noisy skeleton sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired noisy/clean corpus and its manifest.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the corpus seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the corpus directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one network and the models fitted alongside it.
    Train {
        #[arg(value_enum)]
        which: Stage,
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed of the network being trained.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the models directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one pipeline variant over a sequence file.
    Refine {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: String,
        #[arg(long)]
        input: PathBuf,
        /// Output sequence file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a prediction against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Histogram CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every stage and evaluate all configured variants on the test split.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth { config, seed, out } => commands::synth(PipelineConfig::load(&config)?, seed, out),
        Command::Train { which, config, seed, out } => {
            commands::train(PipelineConfig::load(&config)?, which, seed, out)
        }
        Command::Refine { config, variant, input, out } => {
            commands::refine(PipelineConfig::load(&config)?, &variant, &input, out)
        }
        Command::Eval { pred, truth, out } => commands::eval(&pred, &truth, out),
        Command::Run { config, seed, out } => commands::run(PipelineConfig::load(&config)?, seed, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("skelrefine: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
