use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use weathercycle_core::dacr::default_prompts;
use weathercycle_core::metrics::PsnrSpace;

use crate::analyze::{analyze_swap, classify_dir};
use crate::backend::make_backend;
use crate::error::{CliError, CliResult};
use crate::infer::{run_inference, InferOptions};
use crate::settings::RunConfig;
use crate::train::run_training;

#[derive(Debug, Parser)]
#[command(name = "weathercycle", version, about = "Unpaired all-weather image restoration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a `key = value` config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Restore every image in a folder.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Clean references, matched by file name, for PSNR/SSIM reports.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// `rgb` or `luma`.
        #[arg(long, default_value = "rgb")]
        psnr_space: String,
    },
    /// Luminance and amplitude swap analysis of an aligned pair.
    AnalyzeSwap {
        #[arg(long)]
        degraded: PathBuf,
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Difficulty level of every image in a folder.
    Classify {
        #[arg(long = "in")]
        input: PathBuf,
        /// `stub` or `external:<path>`.
        #[arg(long, default_value = "stub")]
        backend: String,
    },
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let s = run_training(&cfg)?;
            if let Some(l) = &s.last {
                println!("step {} total {:.6} cycle {:.6} dacr {:.6}", s.final_step, l.total, l.cycle, l.dacr);
            }
            println!("checkpoint {}", s.checkpoint.display());
        }
        Command::Infer { ckpt, input, out, reference, psnr_space } => {
            let space = PsnrSpace::parse(&psnr_space).ok_or_else(|| CliError::usage(format!("unknown psnr space `{psnr_space}`")))?;
            let r = run_inference(&ckpt, &input, &out, reference.as_deref(), &InferOptions { psnr_space: space })?;
            println!("restored {} images, {} failed", r.restored, r.failed);
            if let (Some(p), Some(s)) = (r.mean_psnr, r.mean_ssim) {
                println!("mean psnr {p:.4} dB, mean ssim {s:.4} over {} images", r.count);
            }
        }
        Command::AnalyzeSwap { degraded, clean, out } => {
            let s = analyze_swap(&degraded, &clean, &out)?;
            println!("raw {:.4} dB, swap_luma {:.4} dB, swap_amplitude {:.4} dB", s.psnr_raw, s.psnr_swap_luma, s.psnr_swap_amplitude);
        }
        Command::Classify { input, backend } => {
            let b = make_backend(&backend)?;
            for c in classify_dir(&input, b.as_ref(), &default_prompts())? {
                let scores: Vec<String> = c.scores.iter().map(|s| format!("{s:.4}")).collect();
                println!("{}\t{}\t{}", c.path, c.level, scores.join(","));
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
