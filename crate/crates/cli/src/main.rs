use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rollsense_cli::{run, CliError, Command, RunConfig};

#[derive(Parser)]
#[command(name = "rollsense", version, about = "Rolling optical tactile sensor pipelines")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: `[paths] out_dir`, else `rollsense-out`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render fabric rolls at three speeds, calibration-grid frames and tap presses.
    Simulate,
    /// Estimate the camera pose from hemisphere-grid frames.
    Calibrate {
        #[arg(long)]
        frames: Option<PathBuf>,
    },
    /// Locate contacts on the cylinder surface.
    Localize {
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Calibration file written by `calibrate`.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Tap manifest with labeled contacts, for the per-cell error table.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Stitch a rolling sequence into a tactile map.
    Stitch {
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Reference image to score the map against.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Roll manifest: ground-truth shifts, reference and alignment.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// SSIM, PSNR and MAE between two images.
    Evaluate { a: PathBuf, b: PathBuf },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let command = match cli.command {
        Cmd::Simulate => Command::Simulate,
        Cmd::Calibrate { frames } => Command::Calibrate { frames },
        Cmd::Localize { frames, calibration, truth } => Command::Localize { frames, calibration, truth },
        Cmd::Stitch { frames, reference, truth } => Command::Stitch { frames, reference, truth },
        Cmd::Evaluate { a, b } => Command::Evaluate { a, b },
    };
    let out_dir = cli
        .out_dir
        .or_else(|| cfg.paths.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("rollsense-out"));
    let report = run(&command, &cfg, &out_dir)?;
    print!("{}", rollsense_cli::report::without_timing(&report.to_toml()));
    eprintln!(
        "{} finished in {:.0} ms; report: {}",
        report.command,
        report.timing.total_ms,
        out_dir.join(format!("{}.report.toml", report.command)).display()
    );
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rollsense: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
