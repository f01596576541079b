//! `ambisplat`: synthesize, train, render and evaluate ambient-motion scenes.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit status for bad flags, unreadable config files and invalid specs.
const EXIT_USAGE: u8 = 1;
const EXIT_FAILURE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "ambisplat", version, about = "Dynamic Gaussian splatting for ambient scenes")]
pub struct Cli {
    /// Flat `key = value` file overriding the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Machine-readable summary on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 2k static / 2k dynamic iterations for synthetic scenes.
    Desk,
    /// Full-length schedule for real captures.
    Full,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known motion.
    Synth(SynthArgs),
    /// Static reconstruction from the dataset point cloud.
    TrainStatic(TrainStaticArgs),
    /// Motion-field training on top of a static checkpoint.
    TrainDynamic(TrainDynamicArgs),
    /// Render a PNG sequence from checkpoints.
    Render(RenderArgs),
    /// PSNR / SSIM on held-out frames.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PathKind {
    Orbit,
    Dolly,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 40)]
    pub frames: usize,
    #[arg(long, default_value_t = 200)]
    pub foreground: usize,
    #[arg(long, default_value_t = 300)]
    pub background: usize,
    #[arg(long, default_value_t = 4)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0.2)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    #[arg(long, default_value_t = 96)]
    pub height: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = PathKind::Orbit)]
    pub path: PathKind,
    /// Orbit arc in degrees.
    #[arg(long, default_value_t = 360.0)]
    pub span: f64,
}

/// Which frames are withheld from training and scored by `eval`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    /// Three held-out segments of 30 frames.
    Long,
    /// Three held-out segments of 4 frames.
    Desk,
    /// Nothing withheld; `eval` scores every frame.
    All,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Desk)]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct TrainStaticArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Schedule length; overrides `static_iters`.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Start from this Gaussian checkpoint instead of the point cloud.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Iterations already completed by `--init`.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    /// Stop after this iteration; defaults to the schedule length.
    #[arg(long)]
    pub stop: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainDynamicArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Static (or resumed dynamic) Gaussian checkpoint.
    #[arg(long)]
    pub gaussians: PathBuf,
    /// Motion field to resume from; a fresh field otherwise.
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Schedule length; overrides `dynamic_iters`.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    #[arg(long)]
    pub stop: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RenderMode {
    /// Every dataset view at one time.
    FixedTime,
    /// One view over a time range, which may extend past the capture.
    FixedView,
    /// Each dataset view at its own time.
    Replay,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Dataset directory supplying the cameras.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub gaussians: PathBuf,
    #[arg(long)]
    pub field: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RenderMode::Replay)]
    pub mode: RenderMode,
    /// Time for `fixed-time`; `T/2` by default. Any real value.
    #[arg(long)]
    pub time: Option<f64>,
    /// Camera index for `fixed-view`; the middle frame by default.
    #[arg(long)]
    pub view: Option<usize>,
    /// First time of a `fixed-view` sweep.
    #[arg(long, default_value_t = 0.0)]
    pub from: f64,
    /// End of a `fixed-view` sweep (exclusive); `T` by default.
    #[arg(long)]
    pub to: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub gaussians: PathBuf,
    #[arg(long)]
    pub field: Option<PathBuf>,
}

/// Error that maps to the usage exit status.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Cause chain joined by `: `, skipping causes the previous message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_FAILURE)
            }
        }
    }
}
