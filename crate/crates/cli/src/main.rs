mod commands;
mod config;
mod output;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;

/// Exit code 2 covers everything the user can fix in the config or on
/// disk; 1 is an engine failure.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Engine(#[from] hierbench_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use hierbench_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Engine(E::Config(_) | E::Io(_)) => 2,
            CliError::Engine(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Io(err.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(err: csv::Error) -> Self {
        CliError::Io(err.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "hierbench", version, about = "Hierarchical federated fine-tuning and inference workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Experiment file (TOML).
    config: PathBuf,
    /// Overrides the seed in the experiment file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. Defaults to `$HIERBENCH_OUT/<command>-seed<seed>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Mode {
    Hierarchy,
    FlatFl,
    MergeOnly,
    LocalOnly,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic corpus described by the config as data files.
    Synth(RunArgs),
    /// Split the training pool into clients and groups.
    Partition(RunArgs),
    /// Train with one pipeline, or all of them for a comparison table.
    Run {
        #[command(flatten)]
        args: RunArgs,
        #[arg(long, value_enum, default_value = "hierarchy")]
        mode: Mode,
    },
    /// Optimal sample counts per capacity and the optional strategy grid.
    Trueput(RunArgs),
    /// Online draft-head learning followed by a tree-size sweep.
    Decode(RunArgs),
    /// Collect the summaries of finished runs into one table.
    Report {
        /// Run directories, searched one level deep for summaries.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(args: &RunArgs, command: &str) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let out = output::resolve_out(args.out.as_deref(), command, Some(cfg.seed));
    Ok((cfg, out))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => {
            let (cfg, out) = load(&args, "synth")?;
            commands::synth(&cfg, &out)
        }
        Command::Partition(args) => {
            let (cfg, out) = load(&args, "partition")?;
            commands::partition(&cfg, &out)
        }
        Command::Run { args, mode } => {
            let (cfg, out) = load(&args, "run")?;
            commands::run(&cfg, mode, &out)
        }
        Command::Trueput(args) => {
            let (cfg, out) = load(&args, "trueput")?;
            commands::trueput(&cfg, &out)
        }
        Command::Decode(args) => {
            let (cfg, out) = load(&args, "decode")?;
            commands::decode(&cfg, &out)
        }
        Command::Report { runs, out } => {
            let out = out.unwrap_or_else(|| output::resolve_out(None, "report", None));
            commands::report(&runs, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hierbench: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
