//! `bfr`: dataset synthesis, training, restoration, evaluation and gradient
//! self-check from one JSON run config.
//!
//! Exit codes: 0 success, 1 gradient check failed, 2 configuration or usage
//! error, 3 I/O or file-format error, 4 training aborted on a non-finite loss.

mod commands;
mod config;

use std::path::PathBuf;

use bfr_core::Error;
use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_degrade, cmd_eval, cmd_gradcheck, cmd_restore, cmd_train, RESTORE_BATCH};
pub use config::{DegradeConfig, PathsConfig, RunConfig, CONFIG_ECHO, SEED_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_GRADCHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NAN: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "bfr", version, about = "Blind face restoration with a conditioned latent diffusion model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run config; omitted sections take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config (and BFR_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize LQ images and manifest.jsonl from a directory of HQ PNGs.
    Degrade {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        hq_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Train on a degraded dataset (directory holding manifest.jsonl, or the manifest itself).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Restore every PNG in a directory with a trained checkpoint.
    Restore {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// PSNR/SSIM/sharpness of restored images against same-named references.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        restored_dir: PathBuf,
        #[arg(long)]
        hq_dir: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Finite-difference check of every op and the training loss (micro model).
    Gradcheck {
        /// Elements probed per parameter tensor in the loss check.
        #[arg(long, default_value_t = 4)]
        samples: usize,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Dimension(_) | Error::Config(_) | Error::Usage(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Image { .. } | Error::Format { .. } => EXIT_IO,
        Error::NonFiniteLoss { .. } => EXIT_NAN,
    }
}

fn load(common: &Common) -> bfr_core::Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let env = std::env::var(SEED_ENV).ok();
    cfg.apply_seed_overrides(env.as_deref(), common.seed)?;
    Ok(cfg)
}

/// Execute one command; returns the process exit code. Errors are reported
/// on standard error.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Degrade {
            common,
            hq_dir,
            out_dir,
            parallelism,
        } => load(&common).and_then(|mut cfg| {
            if let Some(p) = parallelism {
                cfg.degrade.parallelism = p;
            }
            cmd_degrade(cfg, hq_dir, out_dir).map(|_| EXIT_OK)
        }),
        Command::Train { common, data, out_dir } => {
            load(&common).and_then(|cfg| cmd_train(cfg, data, out_dir).map(|_| EXIT_OK))
        }
        Command::Restore {
            common,
            checkpoint,
            input_dir,
            out_dir,
        } => load(&common).and_then(|cfg| cmd_restore(cfg, checkpoint, input_dir, out_dir).map(|_| EXIT_OK)),
        Command::Eval {
            common,
            restored_dir,
            hq_dir,
            out_dir,
        } => load(&common).and_then(|cfg| {
            let report = cmd_eval(cfg, &restored_dir, &hq_dir, out_dir)?;
            println!(
                "mean psnr {:.4} ssim {:.4} sharpness {:.4} over {} images",
                report.mean_psnr,
                report.mean_ssim,
                report.mean_sharpness,
                report.images.len()
            );
            Ok(EXIT_OK)
        }),
        Command::Gradcheck { samples } => cmd_gradcheck(samples).map(|report| {
            for c in &report.checks {
                println!("{:<48} {:.3e}", c.name, c.max_rel_error);
            }
            let worst = report.worst();
            println!(
                "worst relative error {:.3e} ({})",
                report.max_error(),
                worst.map_or("-", |c| c.name.as_str())
            );
            if report.passed() {
                EXIT_OK
            } else {
                EXIT_GRADCHECK
            }
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("bfr: {e}");
            exit_code(&e)
        }
    }
}
