use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use promptlift_cli::commands;
use promptlift_cli::{exit_code_for, BackendMode, RunConfig};

/// Recover text-to-image prompt templates from exemplar images with a
/// PPO-trained mutation agent.
#[derive(Parser)]
#[command(name = "promptlift", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (flat key-value with [sections]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Backend mode override.
    #[arg(long, value_parser = ["sim", "live"])]
    mode: Option<String>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset file override.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig, promptlift_core::Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(mode) = &self.mode {
            cfg.mode = if mode == "live" {
                BackendMode::Live
            } else {
                BackendMode::Sim
            };
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.display().to_string();
        }
        if let Some(dataset) = &self.dataset {
            cfg.dataset = dataset.display().to_string();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the agent on the dataset's training split.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Steal templates with a trained checkpoint (zero image queries).
    Attack {
        #[command(flatten)]
        common: CommonArgs,
        /// Trained checkpoint (defaults to <out>/checkpoints/policy.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated template ids, or "all" for the eval split.
        #[arg(long)]
        templates: Option<String>,
    },
    /// Score stolen templates with the five-metric benchmark.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory of stolen templates (defaults to <out>/stolen).
        #[arg(long)]
        stolen: Option<PathBuf>,
        #[arg(long)]
        templates: Option<String>,
    },
    /// Compare the trained policy against the random-mutation baseline.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of matched trials per arm.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
    /// Generate a synthetic dataset file.
    GenSynth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Easy record count.
        #[arg(long, default_value_t = 25)]
        easy: usize,
        /// Hard record count.
        #[arg(long, default_value_t = 25)]
        hard: usize,
        /// Output path of the dataset JSON.
        #[arg(long)]
        out: PathBuf,
    },
}

fn default_checkpoint(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(&cfg.out)
        .join("checkpoints")
        .join("policy.ckpt")
}

fn run() -> Result<(), promptlift_core::Error> {
    match Cli::parse().command {
        Command::Train { common } => {
            let cfg = common.resolve()?;
            commands::cmd_train(&cfg)?;
        }
        Command::Attack {
            common,
            checkpoint,
            templates,
        } => {
            let cfg = common.resolve()?;
            let ckpt = checkpoint.unwrap_or_else(|| default_checkpoint(&cfg));
            commands::cmd_attack(&cfg, &ckpt, templates.as_deref())?;
        }
        Command::Eval {
            common,
            stolen,
            templates,
        } => {
            let cfg = common.resolve()?;
            commands::cmd_eval(&cfg, stolen.as_deref(), templates.as_deref())?;
        }
        Command::Ablate {
            common,
            checkpoint,
            seeds,
        } => {
            let cfg = common.resolve()?;
            let ckpt = checkpoint.unwrap_or_else(|| default_checkpoint(&cfg));
            commands::cmd_ablate(&cfg, &ckpt, seeds)?;
        }
        Command::GenSynth {
            seed,
            easy,
            hard,
            out,
        } => {
            commands::cmd_gen_synth(seed, easy, hard, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
