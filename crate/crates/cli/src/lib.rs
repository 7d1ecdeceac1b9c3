//! Command-line frontend for the wholebody toolkit: evaluation, error
//! diagnosis, dataset statistics, pipeline runs, format migration and sigma
//! derivation as reproducible batch commands.
//!
//! Conventions shared by every subcommand:
//!
//! - flags are long-form only; paths are explicit (no working-directory
//!   guessing);
//! - exit code 0 on success, 2 for input or validation problems (unreadable
//!   or malformed files, inconsistent flags), 3 for internal invariant
//!   violations;
//! - output files are written atomically — a failing run never leaves a
//!   partial file behind;
//! - given the same inputs, flags and `--seed`, output bytes are identical
//!   across runs and across `--jobs` settings.

use std::ffi::OsString;
use std::fmt;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wholebody::anno::AnnoError;
use wholebody::diagnose::DiagnoseError;
use wholebody::eval::{AreaSource, EvalError};
use wholebody::pipeline::PipelineError;
use wholebody::stats::StatsError;

mod cmds;
mod report;

pub use report::ReportFormat;

/// Whole-body keypoint annotation, evaluation and diagnosis toolkit.
#[derive(Debug, Parser)]
#[command(name = "wholebody", version, max_term_width = 100)]
pub struct Cli {
    /// Worker threads for data-parallel work (default: all logical CPUs).
    /// Results do not depend on this value.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate predictions against ground truth (AP/AR table per part).
    Eval(EvalArgs),
    /// Classify keypoint errors and measure per-category correction gains.
    Diagnose(DiagnoseArgs),
    /// Dataset statistics reports.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Run the zoom pipeline over detection boxes and write predictions.
    Run(RunArgs),
    /// Rewrite an annotation file between foot-keypoint conventions.
    Convert(ConvertArgs),
    /// Derive per-keypoint falloff constants from multi-annotator data.
    Sigmas(SigmasArgs),
}

/// Which area normalizes per-keypoint similarity.
#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum AreaSourceArg {
    /// Face and hand keypoints use their part box area; the rest the person
    /// area.
    #[default]
    PartBox,
    /// Person area everywhere.
    PersonBox,
}

impl From<AreaSourceArg> for AreaSource {
    fn from(a: AreaSourceArg) -> AreaSource {
        match a {
            AreaSourceArg::PartBox => AreaSource::PartBox,
            AreaSourceArg::PersonBox => AreaSource::PersonBox,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth annotation file.
    #[arg(long, value_name = "FILE")]
    pub gt: std::path::PathBuf,

    /// Prediction file (same interchange format, `score` per annotation).
    #[arg(long, value_name = "FILE")]
    pub dt: std::path::PathBuf,

    /// Falloff-constant config: 133 whitespace-separated values.
    #[arg(long, value_name = "FILE")]
    pub sigmas: std::path::PathBuf,

    /// Report destination.
    #[arg(long, value_name = "FILE")]
    pub out: std::path::PathBuf,

    /// Report rows, comma separated: body, foot, face, hand, wholebody.
    /// Default: all five.
    #[arg(long, value_delimiter = ',', value_name = "PART,...")]
    pub parts: Vec<String>,

    #[arg(long, value_enum, default_value_t)]
    pub area_source: AreaSourceArg,

    /// Detections kept per image, by descending score.
    #[arg(long, default_value_t = 20, value_name = "N")]
    pub max_detections: usize,

    #[arg(long, value_enum, default_value_t)]
    pub report_format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Ground-truth annotation file.
    #[arg(long, value_name = "FILE")]
    pub gt: std::path::PathBuf,

    /// Prediction file.
    #[arg(long, value_name = "FILE")]
    pub dt: std::path::PathBuf,

    /// Falloff-constant config: 133 whitespace-separated values.
    #[arg(long, value_name = "FILE")]
    pub sigmas: std::path::PathBuf,

    /// Report destination.
    #[arg(long, value_name = "FILE")]
    pub out: std::path::PathBuf,

    /// Report part for the correction experiment.
    #[arg(long, default_value = "wholebody", value_name = "PART")]
    pub part: String,

    /// Similarity at or above which a keypoint counts as good.
    #[arg(long, default_value_t = 0.85, value_name = "T")]
    pub good: f64,

    /// Similarity at or above which a non-good keypoint counts as jitter.
    #[arg(long, default_value_t = 0.5, value_name = "T")]
    pub jitter: f64,

    #[arg(long, value_enum, default_value_t)]
    pub area_source: AreaSourceArg,

    #[arg(long, value_enum, default_value_t)]
    pub report_format: ReportFormat,
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    /// Tally images, instances, part boxes and labeled keypoints.
    Counts(CountsArgs),
    /// Per-part instance scale histograms (mean skeleton edge length).
    Scale(ScaleArgs),
    /// Variance-of-Laplacian sharpness score per image.
    Blur(BlurArgs),
    /// Cluster hand poses into coarse gesture classes.
    Gestures(GesturesArgs),
}

#[derive(Debug, Args)]
pub struct CountsArgs {
    /// Annotation file.
    #[arg(long, value_name = "FILE")]
    pub input: std::path::PathBuf,

    /// Report destination.
    #[arg(long, value_name = "FILE")]
    pub out: std::path::PathBuf,

    #[arg(long, value_enum, default_value_t)]
    pub report_format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    /// Annotation file.
    #[arg(long, value_name = "FILE")]
    pub input: std::path::PathBuf,

    /// Report destination.
    #[arg(long, value_name = "FILE")]
    pub out: std::path::PathBuf,

    /// Histogram bin width in pixels.
    #[arg(long, default_value_t = 8.0, value_name = "W")]
    pub bin_width: f64,

    /// Layout parts, comma separated: body, foot, face, lefthand, righthand.
    /// Default: all five.
    #[arg(long, value_delimiter = ',', value_name = "PART,...")]
    pub parts: Vec<String>,

    #[arg(long, value_enum, default_value_t)]
    pub report_format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct BlurArgs {
    /// Annotation file (provides the image list).
    #[arg(long, value_name = "FILE")]
    pub input: std::path::PathBuf,

    /// Directory holding the image files.
    #[arg(long, value_name = "DIR")]
    pub images: std::path::PathBuf,

    /// Report destination.
    #[arg(long, value_name = "FILE")]
    pub out: std::path::PathBuf,

    #[arg(long, value_enum, default_value_t)]
    pub report_format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct GesturesArgs {
    /// Annotation file.
    #[arg(long, value_name = "FILE")]
    pub input: std::path::PathBuf,

    /// Report destination.
    #[arg(long, value_name = "FILE")]
    pub out: std::path::PathBuf,

    /// Number of k-means clusters.
    #[arg(long, default_value_t = 3, value_name = "K")]
    pub clusters: usize,

    /// Clustering seed.
    #[arg(long, default_value_t = 0, value_name = "S")]
    pub seed: u64,

    #[arg(long, value_enum, default_value_t)]
    pub report_format: ReportFormat,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PredictorKind {
    /// Replay ground truth through the full tensor path (self-test mode).
    Stub,
    /// Read per-stage heatmap blobs produced by an external model.
    External,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Dataset file providing image metadata; for the stub predictor (and
    /// `--oracle-boxes`) also the ground truth annotations.
    #[arg(long, value_name = "FILE")]
    pub gt: std::path::PathBuf,

    /// Detection boxes: a JSON array of {image_id, bbox, score} objects.
    #[arg(long, value_name = "FILE")]
    pub boxes: std::path::PathBuf,

    /// Predictions destination (annotation interchange format).
    #[arg(long, value_name = "FILE")]
    pub out: std::path::PathBuf,

    #[arg(long, value_enum)]
    pub predictor: PredictorKind,

    /// Stage-blob directory (external predictor only).
    #[arg(long, value_name = "DIR")]
    pub blobs: Option<std::path::PathBuf>,

    /// Image directory. Omitted: blank pixels (the bundled predictors do
    /// not read image content).
    #[arg(long, value_name = "DIR")]
    pub images: Option<std::path::PathBuf>,

    /// Replace decoded face/hand boxes with the best-overlapping
    /// ground-truth part boxes.
    #[arg(long)]
    pub oracle_boxes: bool,

    /// Fractional corner-channel perturbation (stub predictor only).
    #[arg(long, default_value_t = 0.0, value_name = "F")]
    pub box_noise: f64,

    /// Perturbation seed.
    #[arg(long, default_value_t = 0, value_name = "S")]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FootFormArg {
    /// Feet under their own `foot_kpts` key (canonical).
    Separate,
    /// Feet fused into a 23-triplet `keypoints` array.
    Fused,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Annotation file to rewrite.
    #[arg(long, value_name = "FILE")]
    pub input: std::path::PathBuf,

    /// Destination file.
    #[arg(long, value_name = "FILE")]
    pub out: std::path::PathBuf,

    /// Foot convention of the output.
    #[arg(long, value_enum)]
    pub feet: FootFormArg,
}

#[derive(Debug, Args)]
pub struct SigmasArgs {
    /// Multi-annotator file: {"instances": [{"norm": s, "annotations":
    /// [[x, y, v, ...], ...]}, ...]} with 133 triplets per annotation.
    #[arg(long, value_name = "FILE")]
    pub input: std::path::PathBuf,

    /// Destination for the derived 133-value config.
    #[arg(long, value_name = "FILE")]
    pub out: std::path::PathBuf,
}

/// Failures split by exit code: bad inputs (2) versus broken internal
/// invariants (3).
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(msg) => write!(f, "error: {msg}"),
            CliError::Internal(msg) => write!(f, "internal error: {msg}"),
        }
    }
}

impl From<AnnoError> for CliError {
    fn from(e: AnnoError) -> CliError {
        CliError::Input(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> CliError {
        CliError::Input(e.to_string())
    }
}

impl From<DiagnoseError> for CliError {
    fn from(e: DiagnoseError) -> CliError {
        CliError::Input(e.to_string())
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> CliError {
        CliError::Input(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> CliError {
        match e {
            // A stage breaking its shape contract is a bug in the predictor
            // wiring, not in the user's files.
            PipelineError::Contract { .. } => CliError::Internal(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

/// Parse and run, returning the process exit code. Kept separate from
/// `main` so tests can drive the binary in-process.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here too; those exit 0.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// Execute a parsed invocation inside a worker pool of the requested size.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Internal(format!("cannot build worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Eval(args) => cmds::eval(args),
        Command::Diagnose(args) => cmds::diagnose(args),
        Command::Stats(StatsCommand::Counts(args)) => cmds::stats_counts(args),
        Command::Stats(StatsCommand::Scale(args)) => cmds::stats_scale(args),
        Command::Stats(StatsCommand::Blur(args)) => cmds::stats_blur(args),
        Command::Stats(StatsCommand::Gestures(args)) => cmds::stats_gestures(args),
        Command::Run(args) => cmds::run_pipeline(args),
        Command::Convert(args) => cmds::convert(args),
        Command::Sigmas(args) => cmds::sigmas(args),
    })
}
