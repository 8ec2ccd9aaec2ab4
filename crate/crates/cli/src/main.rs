mod commands;
mod manifest;
mod selfcheck;
mod source;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use source::DataSource;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] voltavision::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0} self-check item(s) failed")]
    Selfcheck(usize),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_owned(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_io_or_decode() => 2,
            CliError::Io { .. } => 2,
            CliError::Selfcheck(_) => 3,
            CliError::Core(_) | CliError::Config(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "voltavision", version, about = "Train, transfer and evaluate a compact electronic-component classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network from random initialization on a source dataset.
    Pretrain(PretrainArgs),
    /// Replace a checkpoint's head with a fresh one of a new width.
    Surgery(SurgeryArgs),
    /// Fine-tune a checkpoint (or a fresh network) on a target image folder.
    Finetune(FinetuneArgs),
    /// Stratified k-fold cross-validation on a target image folder.
    Crossval(CrossvalArgs),
    /// Classify one image.
    Predict(PredictArgs),
    /// Describe a checkpoint.
    Inspect(InspectArgs),
    /// Run the built-in numerical checks.
    Selfcheck(SelfcheckArgs),
    /// Rerun the command recorded in a run manifest and compare output hashes.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 25)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f32,
    #[arg(long, default_value_t = 7)]
    pub lr_step: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr_gamma: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Seeds initialization, shuffling and fold assignment.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct PretrainArgs {
    /// Image folder, or CIFAR binary files as `cifar10:FILE`, `cifar100:FILE`
    /// or `cifar:FILE` (flavor from file size). Repeat for several files.
    #[arg(long, required = true)]
    pub data: Vec<DataSource>,
    /// Expected class count after filtering.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Keep only these classes (comma separated), in this order.
    #[arg(long, value_delimiter = ',')]
    pub class_filter: Vec<String>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SurgeryArgs {
    #[arg(long)]
    pub from: PathBuf,
    /// Width of the new head.
    #[arg(long)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
#[group(id = "init", required = true, multiple = false, args = ["from", "scratch"])]
pub struct InitArgs {
    /// Start from this checkpoint; its head is replaced.
    #[arg(long)]
    pub from: Option<PathBuf>,
    /// Start from random initialization and train every layer.
    #[arg(long)]
    pub scratch: bool,
    /// Train the backbone too instead of only the head.
    #[arg(long)]
    pub unfreeze: bool,
}

#[derive(Debug, Clone, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub init: InitArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CrossvalArgs {
    #[command(flatten)]
    pub init: InitArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub report: PathBuf,
    /// Label for the "Pre-Train Dataset" column of the printed table.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Class names, one per line. Defaults to the checkpoint's
    /// `.classes.txt` sidecar when present.
    #[arg(long)]
    pub class_names: Option<PathBuf>,
    /// List classes by descending probability.
    #[arg(long)]
    pub sorted: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Surgery(a) => commands::surgery(&a),
        Command::Finetune(a) => commands::finetune(&a),
        Command::Crossval(a) => commands::crossval(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Inspect(a) => commands::inspect(&a),
        Command::Selfcheck(a) => commands::selfcheck(&a),
        Command::Replay(a) => commands::replay(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
