//! `earmesh`: synthetic corpora, image fitting, colour-model building,
//! augmentation, evaluation and rendering.
//!
//! Every command reads an optional TOML file (`--config`) with one table per
//! command; flags win over file entries. The resolved configuration is
//! printed on stdout and written as `config.toml` next to the outputs.
//!
//! Exit codes: 0 success, 2 usage, 3 data error, 4 numerical divergence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "earmesh", version, about = "Posed, coloured 3D ear meshes from single images")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for batch commands (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic model and a rendered corpus with ground truth.
    Synth(SynthArgs),
    /// Fit the model to one image or to every item of a manifest.
    Fit(FitArgs),
    /// Build a colour model from annotated images and store it in the model file.
    BuildColourModel(ColourArgs),
    /// Write rotated copies of every item of a manifest.
    Augment(AugmentArgs),
    /// Normalised landmark error statistics of predictions against ground truth.
    Eval(EvalArgs),
    /// Render a code vector.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub vertices: Option<usize>,
    #[arg(long)]
    pub k_full: Option<usize>,
    #[arg(long)]
    pub k_white: Option<usize>,
    #[arg(long)]
    pub k_colour: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Scale of the N(0,1) coefficient draws.
    #[arg(long)]
    pub param_sigma: Option<f64>,
    /// Gaussian pixel noise (colour units).
    #[arg(long)]
    pub pixel_sigma: Option<f64>,
    /// Gaussian landmark noise (pixels).
    #[arg(long)]
    pub landmark_sigma: Option<f64>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Single image (PNG).
    #[arg(long, conflicts_with = "manifest")]
    pub image: Option<PathBuf>,
    /// Landmarks for `--image` (.pts).
    #[arg(long, conflicts_with = "manifest")]
    pub landmarks: Option<PathBuf>,
    /// Fit every item of a manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `with-landmarks` or `without-landmarks`.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub lambda_pix: Option<f64>,
    #[arg(long)]
    pub lambda_lm: Option<f64>,
    #[arg(long)]
    pub lambda_reg1: Option<f64>,
    #[arg(long)]
    pub lambda_reg2: Option<f64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub edge_sigma: Option<f64>,
    /// Photometric iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ColourArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Colour components to keep.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rotated copies per item.
    #[arg(long)]
    pub count: Option<usize>,
    /// Ear-direction range in degrees (±).
    #[arg(long)]
    pub range: Option<f64>,
    #[arg(long)]
    pub lobe_index: Option<usize>,
    #[arg(long)]
    pub helix_index: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Predictions manifest.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground-truth manifest.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated CED thresholds.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Also write predicted landmarks drawn on the ground-truth images.
    #[arg(long)]
    pub overlays: bool,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Code vector JSON (default: zero code at the canonical pose).
    #[arg(long)]
    pub code: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub edge_sigma: Option<f64>,
}

/// A failed run: message for stderr and the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const USAGE: u8 = 2;
    pub const DATA: u8 = 3;
    pub const DIVERGED: u8 = 4;

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: Self::USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: Self::DATA,
            message: message.into(),
        }
    }

    pub fn diverged(message: impl Into<String>) -> Self {
        Self {
            code: Self::DIVERGED,
            message: message.into(),
        }
    }
}

impl From<earmesh::Error> for Failure {
    fn from(e: earmesh::Error) -> Self {
        let code = match e {
            earmesh::Error::Argument(_) => Self::USAGE,
            earmesh::Error::Diverged(_) => Self::DIVERGED,
            _ => Self::DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("earmesh: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = config::FileConfig::load(cli.config.as_deref())?;
    let jobs = match cli.jobs.or(file.jobs) {
        Some(0) => return Err(Failure::usage("--jobs must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::data(format!("thread pool: {e}")))?;
    let top_seed = file.seed;
    pool.install(|| match cli.command {
        Command::Synth(a) => commands::synth(file.synth, a, top_seed),
        Command::Fit(a) => commands::fit(file.fit, a, top_seed),
        Command::BuildColourModel(a) => commands::build_colour_model(file.colour, a, top_seed),
        Command::Augment(a) => commands::augment(file.augment, a, top_seed),
        Command::Eval(a) => commands::eval(file.eval, a, top_seed),
        Command::Render(a) => commands::render(file.render, a, top_seed),
    })
}
