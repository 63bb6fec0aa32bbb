use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "revex",
    version,
    about = "Removal-based explanations for video classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment a video into regions and render the region boundaries.
    Segment(SegmentArgs),
    /// Explain a prediction with one or more methods.
    Explain(ExplainArgs),
    /// Score saliency volumes with faithfulness and localization metrics.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic scene with a planted ground truth.
    Synth(SynthArgs),
    /// Check that a remote model endpoint speaks the wire protocol.
    ModelCheck(ModelCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RemovalArg {
    Blur,
    Constant,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Deletion,
    Insertion,
    AvgDrop,
    Pointing,
    Iou,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthPredictorArg {
    HfBox,
    RegionLinear,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML (or JSON) run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Video: an RVX file or a directory of frame_%05d.png files.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub common: Common,
    /// Requested SLIC region count.
    #[arg(long)]
    pub regions: Option<usize>,
    /// Use a regular grid instead of SLIC, as `t,y,x`.
    #[arg(long, value_parser = parse_triple)]
    pub grid: Option<[usize; 3]>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Method to run (repeatable); all six by default.
    #[arg(long = "method")]
    pub methods: Vec<String>,
    /// `builtin:<spec.json>`, `builtin:echo`, `builtin:constant=<c>` or `http://host:port`.
    #[arg(long)]
    pub predictor: Option<String>,
    /// Class index or `top1`.
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long, value_enum)]
    pub removal: Option<RemovalArg>,
    /// Reuse a segmentation file for the region-based methods.
    #[arg(long)]
    pub segmentation: Option<PathBuf>,
    /// Also write first/middle/last-frame contact sheets.
    #[arg(long)]
    pub contact_sheet: bool,
    /// Skip the PNG overlay frames.
    #[arg(long)]
    pub no_frames: bool,
    /// Dump this many perturbed LIME samples as RVX tensors.
    #[arg(long, default_value_t = 0)]
    pub dump_samples: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Saliency volume to score, as `path` or `name=path` (repeatable).
    #[arg(long = "saliency", required = true)]
    pub saliency: Vec<String>,
    #[arg(long)]
    pub predictor: Option<String>,
    /// Ground-truth track JSON; required for pointing and IoU.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Metrics to compute (repeatable); all that apply by default.
    #[arg(long = "metric", value_enum)]
    pub metrics: Vec<MetricArg>,
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum)]
    pub removal: Option<RemovalArg>,
    /// Row label; defaults to the input file stem.
    #[arg(long)]
    pub video_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Seed for the box trajectory; defaults to `--seed`.
    #[arg(long)]
    pub track_seed: Option<u64>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long)]
    pub w: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub box_fraction: Option<f64>,
    #[arg(long, value_enum, default_value = "hf-box")]
    pub predictor: SynthPredictorArg,
}

#[derive(Debug, Args)]
pub struct ModelCheckArgs {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub endpoint: String,
    /// Probe tensor shape, as `t,h,w`.
    #[arg(long, value_parser = parse_triple, default_value = "4,16,16")]
    pub shape: [usize; 3],
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
}

pub fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected t,y,x, got {s:?}"));
    }
    let mut out = [0usize; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("not a count: {p:?}"))?;
        if *o == 0 {
            return Err("counts must be >= 1".into());
        }
    }
    Ok(out)
}
