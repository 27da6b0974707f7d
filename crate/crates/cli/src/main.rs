mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use idxmvs_core::Variant;

/// Bad flags, bad configuration values or an unusable command line.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "idxmvs", version, about = "Multi-view depth estimation with iterative index updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic planar scene directory.
    Synth(SynthArgs),
    /// Train a model on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Predict depth maps with a checkpoint.
    Infer(InferArgs),
    /// Compare predicted and ground-truth depth maps.
    Eval(EvalArgs),
    /// Finite-difference gradient checks of every differentiable operation.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub planes: usize,
    /// Depth of the background plane in meters.
    #[arg(long, default_value_t = 2.0)]
    pub depth: f64,
    #[arg(long, default_value_t = 5)]
    pub frames: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub baseline: f64,
    /// Plane tilt about the vertical axis, radians.
    #[arg(long, default_value_t = 0.0)]
    pub tilt: f64,
    /// Standard deviation of per-frame rotation noise, radians.
    #[arg(long, default_value_t = 0.0)]
    pub rotation_jitter: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// base, pose or pose_atten.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Total optimizer steps; defaults to epochs × samples.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Update iterations; defaults to `iterations_infer`.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Also write the depth map of every iteration.
    #[arg(long)]
    pub emit_iters: bool,
    #[arg(long)]
    pub ablate_pose: bool,
    #[arg(long)]
    pub ablate_atten: bool,
    /// Write color-mapped PNG previews next to the depth maps.
    #[arg(long)]
    pub preview: bool,
    /// Also write each sample's ground truth as PFM into this directory.
    #[arg(long)]
    pub gt_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of predicted `.pfm` maps.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth `.pfm` maps or 16-bit millimeter `.png`
    /// depth images with matching names.
    #[arg(long)]
    pub gt: PathBuf,
    /// CSV output; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25)]
    pub d_min: f64,
    #[arg(long, default_value_t = 20.0)]
    pub d_max: f64,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Add a check whose backward pass is deliberately wrong.
    #[arg(long, hide = true)]
    pub inject_broken: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
