//! `mmcla`: synthesize data, fill the tensor cache, train and evaluate.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mm_core::data::Split;
use mm_core::Error;

#[derive(Parser)]
#[command(name = "mmcla", version, about = "Multimodal cognitive-load assessment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted audio-video cues.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12, value_parser = clap::value_parser!(u64).range(3..))]
        participants: u64,
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        clips_each: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cue amplitude; 0 generates label-independent media.
        #[arg(long, default_value_t = 1.0)]
        signal_strength: f64,
    },
    /// Preprocess every clip of a manifest into the tensor cache.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        workers: u64,
        /// Run config supplying frontend parameters (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model as described by a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: Split,
        /// Run config; defaults to the config.toml frozen beside the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Split file; defaults to the config's.
        #[arg(long)]
        split_file: Option<PathBuf>,
        /// Tensor cache; defaults to the config's.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Report directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default run config.
    Defaults,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth {
            out,
            participants,
            clips_each,
            seed,
            signal_strength,
        } => commands::synth(&out, participants as usize, clips_each as usize, seed, signal_strength),
        Command::Preprocess {
            manifest,
            cache,
            workers,
            config,
        } => commands::preprocess(&manifest, &cache, workers as usize, config.as_deref()),
        Command::Train { config } => commands::train(&config),
        Command::Eval {
            checkpoint,
            manifest,
            split,
            config,
            split_file,
            cache,
            out,
        } => commands::eval(commands::EvalArgs {
            checkpoint,
            manifest,
            split,
            config,
            split_file,
            cache,
            out,
        }),
        Command::Defaults => {
            print!("{}", mm_core::config::RunConfig::default().to_toml());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
