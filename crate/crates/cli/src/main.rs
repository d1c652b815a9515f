mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dttnet::Error;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "dttnet", version, about = "Music source separation with a dual-path TFC-TDF UNet")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.batch_size=8`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Seed for every random stream (same as `--set seed=N`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train or fine-tune a model.
    Train(commands::train::TrainArgs),
    /// Separate one source from a WAV file.
    Separate(commands::separate::SeparateArgs),
    /// Score a model on a track directory.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Print the per-layer parameter table.
    Inspect(commands::inspect::InspectArgs),
    /// Write pattern-overlaid evaluation mixtures and their manifest.
    Mixgen(commands::mixgen::MixgenArgs),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Unsupported(_) => 2,
        Error::Data(_)
        | Error::Audio(_)
        | Error::SampleRate { .. }
        | Error::Wav { .. }
        | Error::Io { .. }
        | Error::Checkpoint { .. }
        | Error::Shape(_) => 3,
        Error::Numerical(_) => 4,
    }
}

fn run(cli: Cli) -> dttnet::Result<()> {
    let mut overrides = cli.global.overrides;
    if let Some(seed) = cli.global.seed {
        overrides.push(format!("seed={seed}"));
    }
    let load = |extra: Vec<String>| {
        let mut all = overrides.clone();
        all.extend(extra);
        RunConfig::load(cli.global.config.as_deref(), &all)
    };
    match cli.command {
        Command::Train(a) => {
            let cfg = load(a.overrides())?;
            commands::train::run(&cfg, &a)
        }
        Command::Separate(a) => commands::separate::run(&load(Vec::new())?, &a),
        Command::Evaluate(a) => commands::evaluate::run(&load(Vec::new())?, &a),
        Command::Inspect(a) => commands::inspect::run(&load(a.overrides())?, &a),
        Command::Mixgen(a) => commands::mixgen::run(&load(Vec::new())?, &a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
