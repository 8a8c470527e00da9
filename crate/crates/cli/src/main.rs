//! `cgg` binary: dispatches the pipeline commands. Verbosity comes from the
//! `CGG_LOG` env var (`error`..`trace`, default `info`); logs go to stderr
//! so stdout stays machine-readable.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cgg_cli::{
    cmd_evaluate, cmd_explain, cmd_gradcheck, cmd_preprocess, cmd_synth, cmd_train, Overrides,
    RunConfig,
};
use cgg_core::preprocess::SplitMode;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitModeArg {
    Sample,
    Subject,
}

impl From<SplitModeArg> for SplitMode {
    fn from(arg: SplitModeArg) -> Self {
        match arg {
            SplitModeArg::Sample => SplitMode::SampleLevel,
            SplitModeArg::Subject => SplitMode::SubjectLevel,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "cgg",
    version,
    about = "Gait-sensor graph classifier: synthesis, preprocessing, training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run config; built-in defaults apply when omitted
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory override
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Checkpoint path override (written by train, read by evaluate/explain)
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Master seed N: data seeds become N, init N+1, dropout N+2
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Edge-list file overriding the default sensor adjacency
    #[arg(long, global = true, value_name = "PATH")]
    adjacency: Option<PathBuf>,
    /// How cycles are assigned to splits
    #[arg(long, global = true, value_enum, value_name = "MODE")]
    split_mode: Option<SplitModeArg>,
    /// Decision threshold for evaluate
    #[arg(long, global = true, value_name = "X")]
    threshold: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into paths.data_dir
    Synth,
    /// Parse, normalize, segment and split the raw recordings
    Preprocess,
    /// Train the classifier on the preprocessed splits
    Train,
    /// Score a checkpoint on the held-out test split
    Evaluate,
    /// Write per-sensor importance for test samples
    Explain,
    /// Verify analytic gradients against finite differences
    Gradcheck,
}

fn run(cli: Cli) -> cgg_core::Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let overrides = Overrides {
        out: cli.out,
        checkpoint: cli.checkpoint,
        seed: cli.seed,
        adjacency: cli.adjacency,
        split_mode: cli.split_mode.map(SplitMode::from),
        threshold: cli.threshold,
    };
    config.apply(&overrides)?;

    match cli.command {
        Command::Synth => cmd_synth(&config),
        Command::Preprocess => cmd_preprocess(&config),
        Command::Train => cmd_train(&config, &overrides),
        Command::Evaluate => cmd_evaluate(&config, &overrides).map(|_| ()),
        Command::Explain => cmd_explain(&config, &overrides).map(|_| ()),
        Command::Gradcheck => cmd_gradcheck(&config).map(|_| ()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CGG_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
