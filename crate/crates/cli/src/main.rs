mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patn::model::Variant;
use patn::train::Precision;

#[derive(Parser, Debug)]
#[command(name = "patn", version, about = "Pose-attentional transfer networks: data, training, evaluation and benchmarks")]
pub struct Cli {
    /// Directory every output path is resolved under; absolute outputs must lie inside it.
    #[arg(long, env = "PATN_OUTPUT_ROOT", global = true)]
    pub output_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic stick-figure pair dataset.
    Synth(SynthArgs),
    /// Train a generator and its discriminators.
    Train(TrainArgs),
    /// Generate target-pose images for every pair of a dataset.
    Infer(InferArgs),
    /// Score generated images with SSIM, mask-SSIM and PCKh.
    Eval(EvalArgs),
    /// Print analytic parameter counts.
    Params(ParamsArgs),
    /// Time one PATB and one APATB forward pass.
    Bench(BenchArgs),
    /// Write per-block attention maps of one pair as P5 images.
    ExportAttn(ExportArgs),
    /// Re-run the command recorded in a run manifest.
    Rerun(RerunArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON config: seed, n_identities, poses_per_identity, height, width.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub identities: Option<usize>,
    #[arg(long)]
    pub poses: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON training config (see README for the schema).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint directory written by an earlier run.
    #[arg(long, conflicts_with = "config")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    /// Dataset directory to train on instead of freshly synthesized pairs.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Do not echo log lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Checkpoint directory (containing `gen/`) or a generator directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of `<pair_id>.ppm` generated images.
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Keypoints detected on the generated images, keyed by pair id.
    #[arg(long)]
    pub pred_keypoints: Option<PathBuf>,
    /// Dilation radius in pixels of heatmap-support masks, used for targets without a stored mask.
    #[arg(long, default_value_t = 4.5)]
    pub mask_radius: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ParamsArgs {
    /// JSON model config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// JSON bench config: size, channels, batch, iters, warmup, seed.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, value_parser = parse_precision, default_value = "f64")]
    pub precision: Precision,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Pair id to visualize; the first pair when omitted.
    #[arg(long)]
    pub pair: Option<String>,
    /// Also export alignment rows restricted to the target figure mask.
    #[arg(long)]
    pub foreground: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(format!("unknown precision {other:?} (expected f32 or f64)")),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error kind=usage message={first}");
            return ExitCode::from(2);
        }
    };
    match commands::dispatch(&cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error kind={} message={message}", e.kind());
            match e {
                patn::Error::Config(_) | patn::Error::Usage(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
