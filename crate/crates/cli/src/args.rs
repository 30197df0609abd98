use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "sigan",
    version,
    about = "Unpaired defect translation for EL solar-cell images",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the two generators and two discriminators.
    Train(TrainArgs),
    /// Segment defects by translating to defect-free and thresholding the difference.
    Segment(SegmentArgs),
    /// Generate synthetic defective images from defect-free ones.
    Augment(AugmentArgs),
    /// Frechet distance between two image directories.
    EvaluateFid(FidArgs),
    /// Score predicted masks against ground-truth masks.
    EvaluateSeg(SegEvalArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML config file; omitted keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root containing `train/<class>/` directories.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for checkpoints, log and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Config override `key=value`, applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Continue from this checkpoint directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolarityArg {
    Absolute,
    Signed,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One image or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed threshold on the difference map (range 0 to 2).
    #[arg(long, conflicts_with = "otsu")]
    pub threshold: Option<f64>,
    /// Per-image Otsu threshold (the default).
    #[arg(long)]
    pub otsu: bool,
    /// Ground-truth masks named like the inputs; prints aggregate metrics.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "absolute")]
    pub polarity: PolarityArg,
    /// Drop connected components smaller than this many pixels.
    #[arg(long, default_value_t = 0)]
    pub min_area: usize,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    /// Also write the translated defect-free images to `generated/`.
    #[arg(long)]
    pub save_generated: bool,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root; defect-free images are read from `train/defect_free/`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Target class; defaults to the class the checkpoint was trained on.
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Allow reusing defect-free sources when `count` exceeds them.
    #[arg(long)]
    pub with_replacement: bool,
}

#[derive(Debug, Args)]
pub struct FidArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub fake: PathBuf,
    /// `inception_v3` or `histogram[:BINS]`.
    #[arg(long, default_value = sigan::evaluation::DEFAULT_EXTRACTOR)]
    pub extractor: String,
    /// Images are resized to this square size before feature extraction.
    #[arg(long, default_value_t = sigan::data::IMAGE_SIZE)]
    pub size: usize,
    /// Where to write the report and run manifest (default: the fake directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SegEvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Where to write the report and run manifest (default: the prediction directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
