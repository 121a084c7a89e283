//! `forgepipe`: synthetic data, face tracking, clip cutting, augmentation,
//! contrastive-loss evaluation, classifier training, scoring, evaluation and
//! audio-enrichment planning from one binary.

mod config;
mod error;
mod learn;
mod media;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use forgepipe_core::losses::NegativeMode;
use forgepipe_core::par::Execution;

use crate::config::PipelineConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "forgepipe", version, about = "Audio-visual deepfake detection pipeline", propagate_version = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML pipeline config; command-line flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random draw (default 0)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: logical CPUs). Outputs do not depend on it
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Output file or directory
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes, embedding sets, or embeddings for cut clips
    Synth(SynthArgs),
    /// Build face tracks from detections and write aligned 224x224 crops
    Track(TrackArgs),
    /// Cut 32-frame clips with aligned audio from aligned tracks
    Clips(ClipsArgs),
    /// Apply clip-level visual augmentation to cut clips
    Augment(AugmentArgs),
    /// Evaluate the contrastive loss and its gradients on a batch
    LossEval(LossEvalArgs),
    /// Train the real/fake classifier head on an embedding table
    TrainHead(TrainHeadArgs),
    /// Score clip embeddings with a trained head
    Score(ScoreArgs),
    /// Video-level ROC-AUC and accuracy from clip scores
    Eval(EvalArgs),
    /// Plan audio enrichment and cut origin audio for manipulated videos
    EnrichPlan(EnrichArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Rendered frames, detections, audio and ground truth per video
    #[value(alias = "scene")]
    Scenes,
    /// Labelled per-clip embedding table with its manifest
    #[value(alias = "embedding")]
    Embeddings,
    /// Embeddings for the rows of a clips.jsonl, labelled from a manifest
    ClipEmbeddings,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// What to generate
    #[arg(long, value_enum, default_value_t = SynthKind::Scenes)]
    pub kind: SynthKind,
    /// Number of videos
    #[arg(long)]
    pub videos: Option<usize>,
    /// Frames per scene
    #[arg(long)]
    pub frames: Option<usize>,
    /// Scene width in pixels
    #[arg(long)]
    pub width: Option<usize>,
    /// Scene height in pixels
    #[arg(long)]
    pub height: Option<usize>,
    /// Most persons per scene
    #[arg(long)]
    pub max_persons: Option<usize>,
    /// Clips per video for embedding tables
    #[arg(long)]
    pub clips_per_video: Option<usize>,
    /// Visual embedding width
    #[arg(long)]
    pub dim_v: Option<usize>,
    /// Audio embedding width (0 for none)
    #[arg(long)]
    pub dim_a: Option<usize>,
    /// Distance between class means, in noise standard deviations
    #[arg(long)]
    pub separation: Option<f32>,
    /// Fraction of fake videos in embedding tables
    #[arg(long)]
    pub fake_fraction: Option<f32>,
    /// clips.jsonl directory (clip-embeddings)
    #[arg(long, value_name = "DIR")]
    pub clips: Option<PathBuf>,
    /// Manifest supplying labels (clip-embeddings)
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Video manifest (JSONL)
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Directory of <video_id>.jsonl detection files
    #[arg(long, value_name = "DIR")]
    pub detections: PathBuf,
    /// Minimum detection confidence
    #[arg(long)]
    pub confidence: Option<f32>,
    /// Force multi-face (true) or single-face (false) mode
    #[arg(long)]
    pub multi_face: Option<bool>,
    /// Landmark smoothing window (odd)
    #[arg(long)]
    pub smooth_window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ClipsArgs {
    /// Video manifest (JSONL)
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Output directory of `track`
    #[arg(long, value_name = "DIR")]
    pub tracks: PathBuf,
    /// Clips per track
    #[arg(long = "clips", alias = "clips-per-track", value_name = "N")]
    pub clips_per_track: Option<usize>,
    /// Evenly spaced inference starts, or random training starts
    #[arg(long, value_enum, default_value_t = ClipMode::Infer)]
    pub mode: ClipMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClipMode {
    Train,
    Infer,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Output directory of `clips`
    #[arg(long, value_name = "DIR")]
    pub clips: PathBuf,
    /// Horizontal flip probability
    #[arg(long)]
    pub p_flip: Option<f32>,
    /// Largest hue shift, in hue turns
    #[arg(long)]
    pub hue: Option<f32>,
    /// Largest brightness shift
    #[arg(long)]
    pub brightness: Option<f32>,
    /// Turn every augmentation off
    #[arg(long)]
    pub identity: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NegativesArg {
    Symmetric,
    OneSided,
}

impl From<NegativesArg> for NegativeMode {
    fn from(n: NegativesArg) -> Self {
        match n {
            NegativesArg::Symmetric => NegativeMode::Symmetric,
            NegativesArg::OneSided => NegativeMode::OneSided,
        }
    }
}

#[derive(Debug, Args)]
pub struct LossEvalArgs {
    /// Batch spec JSON naming the embedding tensors
    #[arg(long, value_name = "FILE")]
    pub batch: PathBuf,
    /// Softmax temperature
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Weight of the video-audio term
    #[arg(long)]
    pub lambda_va: Option<f64>,
    /// Weight of the video-text term
    #[arg(long)]
    pub lambda_vt: Option<f64>,
    /// Negative pairs per anchor
    #[arg(long, value_enum)]
    pub negatives: Option<NegativesArg>,
    /// Write gradient tensors to this directory
    #[arg(long, value_name = "DIR")]
    pub grads_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainHeadArgs {
    /// Embedding table directory (zv.ft, za.ft, examples.jsonl)
    #[arg(long, value_name = "DIR")]
    pub embeddings: PathBuf,
    /// Training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Examples per update
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Train only the output layer
    #[arg(long)]
    pub freeze_hidden: bool,
    /// Ignore audio embeddings
    #[arg(long)]
    pub video_only: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Clip embedding table directory
    #[arg(long, value_name = "DIR")]
    pub clips: PathBuf,
    /// Head bundle directory written by train-head
    #[arg(long, value_name = "DIR")]
    pub head: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Clip score CSV
    #[arg(long, value_name = "FILE")]
    pub scores: PathBuf,
    /// Video manifest with labels and tags
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Drop videos carrying this tag (repeatable)
    #[arg(long, value_name = "TAG")]
    pub exclude_tag: Vec<String>,
    /// Accuracy threshold; scores at or above it count as fake
    #[arg(long)]
    pub threshold: Option<f32>,
}

#[derive(Debug, Args)]
pub struct EnrichArgs {
    /// Enrichment spec (JSONL)
    #[arg(long, value_name = "FILE")]
    pub spec: PathBuf,
}

/// Settings shared by every command.
pub struct Context {
    pub config: PipelineConfig,
    seed: Option<u64>,
    pub exec: Execution,
    pub out: Option<PathBuf>,
}

impl Context {
    /// `--seed` when given, else the config's value for this stage.
    pub fn seed_or(&self, configured: u64) -> u64 {
        self.seed.unwrap_or(configured)
    }

    pub fn out(&self) -> Result<&std::path::Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("this command needs --out".into()))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = PipelineConfig::load(cli.global.config.as_deref())?;
    let ctx = Context {
        config,
        seed: cli.global.seed,
        exec: match cli.global.jobs {
            Some(1) => Execution::Sequential,
            _ => Execution::Parallel,
        },
        out: cli.global.out,
    };
    match cli.command {
        Command::Synth(a) => media::synth(&ctx, a),
        Command::Track(a) => media::track(&ctx, a),
        Command::Clips(a) => media::clips(&ctx, a),
        Command::Augment(a) => media::augment(&ctx, a),
        Command::LossEval(a) => learn::loss_eval(&ctx, a),
        Command::TrainHead(a) => learn::train_head(&ctx, a),
        Command::Score(a) => learn::score(&ctx, a),
        Command::Eval(a) => learn::eval(&ctx, a),
        Command::EnrichPlan(a) => learn::enrich_plan(&ctx, a),
    }
}

fn with_pool(jobs: Option<usize>, f: impl FnOnce() -> Result<(), CliError> + Send) -> Result<(), CliError> {
    match jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(f),
        _ => f(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FORGEPIPE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let jobs = cli.global.jobs;
    match with_pool(jobs, || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}\n\nFor more information, try '--help'."),
                _ => {
                    let mut err = std::io::stderr().lock();
                    let _ = writeln!(err, "{}", e.to_json());
                }
            }
            ExitCode::from(e.exit_code())
        }
    }
}
