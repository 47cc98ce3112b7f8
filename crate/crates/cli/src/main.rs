//! chanforge pipeline driver: data generation, denoiser training, dataset
//! augmentation, and downstream evaluation, all driven by one config file.

mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use commands::{AugMethod, EvalTask, TrainMode};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "chanforge", version, about = "Conditional-diffusion channel augmentation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write reference train/test datasets for the configured scene.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the conditional denoiser on the train dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "cddim")]
        mode: Mode,
        /// Warm-start checkpoint (consistency mode defaults to cddim.ckpt
        /// when present).
        #[arg(long)]
        init_from: Option<PathBuf>,
        /// Continue training from the existing checkpoint, extending the
        /// loss history.
        #[arg(long)]
        resume: bool,
    },
    /// Produce an augmented dataset of n_train + n_aug records.
    Augment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
    },
    /// Run a downstream evaluation and write its metrics CSV.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        task: Task,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Cddim,
    Consistency,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Cddim,
    Gaussian,
    Nearest,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Peaks,
    Compress,
    Beam,
}

fn exit_code_for(err: &chanforge::Error) -> u8 {
    match err {
        chanforge::Error::InvalidArgument(_) => 2,
        chanforge::Error::Io(_) | chanforge::Error::Format(_) => 3,
        chanforge::Error::Divergence(_) => 4,
        _ => 1,
    }
}

fn run() -> chanforge::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { config } => {
            let cfg = RunConfig::load(&config)?;
            commands::cmd_gen_data(&cfg)
        }
        Command::Train {
            config,
            mode,
            init_from,
            resume,
        } => {
            let cfg = RunConfig::load(&config)?;
            let mode = match mode {
                Mode::Cddim => TrainMode::Cddim,
                Mode::Consistency => TrainMode::Consistency,
            };
            commands::cmd_train(&cfg, mode, init_from.as_deref(), resume)
        }
        Command::Augment { config, method } => {
            let cfg = RunConfig::load(&config)?;
            let method = match method {
                Method::Cddim => AugMethod::Cddim,
                Method::Gaussian => AugMethod::Gaussian,
                Method::Nearest => AugMethod::Nearest,
            };
            commands::cmd_augment(&cfg, method)
        }
        Command::Eval { config, task } => {
            let cfg = RunConfig::load(&config)?;
            let task = match task {
                Task::Peaks => EvalTask::Peaks,
                Task::Compress => EvalTask::Compress,
                Task::Beam => EvalTask::Beam,
            };
            commands::cmd_eval(&cfg, task)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
