mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Train and apply CNN denoisers on grayscale images, with or without clean
/// training targets.
#[derive(Debug, Parser)]
#[command(name = "suredn", version, max_term_width = 100)]
pub struct Cli {
    /// TOML config file; command-line flags override its values
    #[arg(long, global = true, value_name = "FILE", display_order = 100)]
    config: Option<PathBuf>,

    /// Only print warnings and errors
    #[arg(short, long, global = true, conflicts_with = "verbose", display_order = 101)]
    quiet: bool,

    /// Print debug messages
    #[arg(short, long, global = true, display_order = 102)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut the images listed in a manifest into a training patch cache
    PrepareData(PrepareArgs),
    /// Train a denoiser on a patch cache
    Train(Box<TrainArgs>),
    /// Denoise images with a trained checkpoint
    Denoise(DenoiseArgs),
    /// Add noise to clean images, denoise them and report PSNR/SSIM
    Eval(EvalArgs),
    /// Add Gaussian noise to an image
    Noise(NoiseArgs),
    /// Run the gradient-check and SURE unbiasedness suites
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Manifest listing one image path per line, relative to the manifest
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,

    /// Patch cache to write
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Patch side length in pixels [default: 40]
    #[arg(long, value_name = "N")]
    patch_size: Option<usize>,

    /// Distance between patch origins [default: 10]
    #[arg(long, value_name = "N")]
    stride: Option<usize>,

    /// Comma-separated downscaling factors in (0, 1] [default: 1,0.9,0.8,0.7]
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    scales: Option<Vec<f64>>,

    /// Comma-separated augmentations: none, hflip, vflip, rot90, rot180,
    /// rot270 [default: none,hflip]
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    augment: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Architecture preset: full (depth 16, width 64) or desk (depth 4,
    /// width 16) [default: full]
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,

    /// Number of convolution layers; overrides the preset
    #[arg(long, value_name = "N")]
    depth: Option<usize>,

    /// Hidden channels; overrides the preset
    #[arg(long, value_name = "N")]
    width: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Patch cache written by prepare-data
    #[arg(long, value_name = "FILE")]
    patches: PathBuf,

    /// Noise standard deviation on the 0-255 scale
    #[arg(long, value_name = "SIGMA")]
    sigma: f64,

    /// Training objective: sure (noisy data only) or mse (clean targets)
    /// [default: sure]
    #[arg(long, value_name = "KIND")]
    loss: Option<String>,

    /// Number of epochs [default: 50]
    #[arg(long, value_name = "N")]
    epochs: Option<u32>,

    /// Patches per batch [default: 64]
    #[arg(long, value_name = "N")]
    batch: Option<usize>,

    /// Adam learning rate up to the drop epoch [default: 1e-4]
    #[arg(long, value_name = "RATE")]
    lr: Option<f64>,

    /// Learning rate after the drop epoch [default: 1e-5]
    #[arg(long, value_name = "RATE")]
    lr_drop: Option<f64>,

    /// Last epoch trained at --lr [default: 25]
    #[arg(long, value_name = "N")]
    drop_epoch: Option<u32>,

    /// Seed for initialization, shuffling, noise and probes [default: 0]
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    #[command(flatten)]
    model: ModelArgs,

    /// Fixed divergence step; replaces the range-relative rule
    #[arg(long, value_name = "EPS", conflicts_with_all = ["epsilon_scale", "epsilon_floor"])]
    epsilon: Option<f64>,

    /// Divergence step as a fraction of the batch value range [default: 1e-4]
    #[arg(long, value_name = "X")]
    epsilon_scale: Option<f64>,

    /// Added to the batch value range before scaling [default: 1e-3]
    #[arg(long, value_name = "X")]
    epsilon_floor: Option<f64>,

    /// Divergence probe distribution: gaussian or rademacher [default: gaussian]
    #[arg(long, value_name = "DIST")]
    probe: Option<String>,

    /// Divergence probes per batch [default: 1]
    #[arg(long, value_name = "N")]
    probes: Option<usize>,

    /// Draw one noisy copy per patch for the whole run instead of fresh
    /// noise every epoch
    #[arg(long)]
    fixed_noise: bool,

    /// Checkpoint to write at the end of training
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Loss CSV [default: the checkpoint path with a .csv extension]
    #[arg(long, value_name = "FILE")]
    loss_log: Option<PathBuf>,

    /// Also save a checkpoint every N epochs into --checkpoint-dir
    #[arg(long, value_name = "N", requires = "checkpoint_dir")]
    checkpoint_every: Option<u32>,

    /// Directory for periodic checkpoints
    #[arg(long, value_name = "DIR")]
    checkpoint_dir: Option<PathBuf>,

    /// Continue from a checkpoint saved by an earlier run
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    /// Trained checkpoint
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,

    /// Directory for the denoised images, written under their input names
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,

    /// Noisy .pgm images
    #[arg(required = true, value_name = "IMAGE")]
    images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained checkpoint
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,

    /// Directory of clean .pgm images
    #[arg(long, value_name = "DIR", required_unless_present = "manifest")]
    clean: Option<PathBuf>,

    /// Manifest of clean images, instead of --clean
    #[arg(long, value_name = "FILE", conflicts_with = "clean")]
    manifest: Option<PathBuf>,

    /// Noise standard deviation on the 0-255 scale
    #[arg(long, value_name = "SIGMA")]
    sigma: f64,

    /// Seed for the added noise [default: 0]
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Write the per-image report as CSV
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Clean .pgm image
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    /// Noise standard deviation on the 0-255 scale
    #[arg(long, value_name = "SIGMA")]
    sigma: f64,

    /// Noise seed [default: 0]
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Noisy image to write, clipped to 0-255
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Fewer trials and noise draws
    #[arg(long)]
    quick: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config file {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("{0} check(s) failed")]
    SelftestFailed(usize),
    #[error(transparent)]
    Core(#[from] suredn::Error),
}

impl CliError {
    /// 1 usage, 2 I/O, 3 file format, 4 numeric failure.
    fn exit_code(&self) -> u8 {
        use suredn::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Config { .. } => 3,
            CliError::SelftestFailed(_) => 4,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) => 1,
                E::Io { .. } => 2,
                E::Pgm(_) | E::Checkpoint(_) | E::PatchCache(_) => 3,
                E::Shape(_) | E::NotScalar { .. } | E::NonFiniteLoss { .. } => 4,
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.quiet {
        log::LevelFilter::Warn
    } else if cli.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();

    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
