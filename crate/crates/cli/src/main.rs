//! `blurdiff`: train, sample and analyze blurring diffusion models on toy
//! data, inspect their schedules, and run the verification suite.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blurdiff", version, about = "Blurring diffusion models: \
frequency-dependent Gaussian diffusion in the DCT basis")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the key=value run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the noise/blur schedule to a CSV.
    InspectSchedule {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the verification suite (exit code 1 on any failing check).
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Fault injection for testing the suite itself.
        #[arg(long, hide = true)]
        corrupt_dct: bool,
    },
    /// Train the denoiser on the configured dataset.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate samples from a checkpoint.
    Sample {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint to sample from (model.ckpt or model.ema.ckpt).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Override the config last-step mode (literal | mean).
        #[arg(long)]
        last_step: Option<String>,
        /// Clip the implied data prediction to [-1, 1] each step.
        #[arg(long)]
        clip_xhat: bool,
    },
    /// Compare the spectrum of a sample set against a reference set.
    Psd {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate the configured toy dataset.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn run() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    match cli.cmd {
        Command::InspectSchedule { common } => {
            let ctx = commands::prepare(&common.config, common.seed, common.out)?;
            commands::inspect_schedule::run(&ctx)?;
        }
        Command::Verify {
            common,
            corrupt_dct,
        } => {
            let ctx = commands::prepare(&common.config, common.seed, common.out)?;
            return commands::verify::run(&ctx, corrupt_dct);
        }
        Command::Train { common } => {
            let ctx = commands::prepare(&common.config, common.seed, common.out)?;
            commands::train::run(&ctx)?;
        }
        Command::Sample {
            common,
            checkpoint,
            last_step,
            clip_xhat,
        } => {
            let mut ctx = commands::prepare(&common.config, common.seed, common.out)?;
            if let Some(mode) = last_step {
                ctx.cfg.last_step = blurdiff_core::sampler::LastStepMode::parse(&mode)?;
            }
            if clip_xhat {
                ctx.cfg.clip_xhat = true;
            }
            // Flags are part of the resolved configuration.
            std::fs::write(ctx.out_dir.join("config.resolved.txt"), ctx.cfg.serialize())?;
            commands::sample::run(&ctx, &checkpoint)?;
        }
        Command::Psd { common } => {
            let ctx = commands::prepare(&common.config, common.seed, common.out)?;
            commands::psd::run(&ctx)?;
        }
        Command::GenData { common } => {
            let ctx = commands::prepare(&common.config, common.seed, common.out)?;
            commands::gen_data::run(&ctx)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
