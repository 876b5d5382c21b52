mod colormap;
mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "wsdepth", version, about = "Weakly supervised depth estimation: data, training, evaluation")]
pub struct Cli {
    /// `key = value` file; command-line flags win over it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default `runs/<command>`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Re-run the command recorded in a manifest, with its resolved config.
    #[arg(long, global = true, value_name = "MANIFEST")]
    pub replay: Option<PathBuf>,
    /// Only print errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural dataset.
    SynthData(SynthArgs),
    /// Pretrain the depth reconstruction teacher on LR depth maps.
    PretrainTeacher(TrainArgs),
    /// Train the student from HR color and LR depth.
    Train(TrainArgs),
    /// Evaluate a student checkpoint on a dataset.
    Eval(EvalArgs),
    /// Predict depth for a single color image.
    Predict(PredictArgs),
    /// Tabulate evaluation reports.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthData(_) => "synth-data",
            Command::PretrainTeacher(_) => "pretrain-teacher",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Predict(_) => "predict",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: Option<usize>,
    /// `N` for square images or `HxW`.
    #[arg(long)]
    pub size: Option<String>,
    /// LR/HR resolution ratio.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub max_rects: Option<usize>,
    #[arg(long)]
    pub texture_amplitude: Option<f32>,
    #[arg(long)]
    pub d_min: Option<f32>,
    #[arg(long)]
    pub d_max: Option<f32>,
    /// Raw 16-bit units per meter.
    #[arg(long)]
    pub depth_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Frozen teacher checkpoint (student training only).
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Loss terms, a comma list of LR, HR, net, distill.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_lr: Option<f64>,
    /// Continue from a `last.ckpt` written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// `hr` feeds the color image as is, `lr` its downsampled version.
    #[arg(long)]
    pub input_res: Option<String>,
    /// Clamp depths to this many meters before scoring.
    #[arg(long)]
    pub cap: Option<f64>,
    #[arg(long)]
    pub garg_crop: bool,
    #[arg(long)]
    pub no_mirror: bool,
    /// `all` or `holdout` (the training run's held-out split).
    #[arg(long)]
    pub split: Option<String>,
    /// Skip writing depth maps and previews.
    #[arg(long)]
    pub no_images: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Color PNG.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub no_mirror: bool,
    #[arg(long)]
    pub depth_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `report.json` files or directories holding one.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
}

/// Exit status for an error: 2 configuration, 3 files, 4 numerics, 1 other.
fn exit_code(e: &anyhow::Error) -> u8 {
    use wsdepth::error::Error as E;
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Config(_) | E::InvalidArgument(_) => 2,
                E::Io { .. } | E::Format { .. } | E::Image { .. } => 3,
                E::Numeric(_) | E::Diverged(_) | E::Domain(_) => 4,
                E::NoValidPixels(_) => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    if e.downcast_ref::<settings::UsageError>().is_some() {
        return 2;
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
