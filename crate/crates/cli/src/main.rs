use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod flowviz;

/// Layered motion segmentation of event-camera streams.
#[derive(Parser, Debug)]
#[command(name = "evseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset with ground truth.
    Simulate(SimulateArgs),
    /// Fit two motion layers to an event window and write a result bundle.
    Segment(SegmentArgs),
    /// Write images of events before and after motion compensation.
    Deblur(DeblurArgs),
    /// Score result bundles against ground-truth masks.
    Eval(EvalArgs),
    /// Write the B-bin voxel grid of an event file.
    Voxelize(VoxelizeArgs),
    /// Colour-code a flow tensor as a PNG.
    RenderFlow(RenderFlowArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the first sequence; later sequences count up from it.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub gt_mode: Option<GtModeArg>,
    /// Flow magnitude threshold for `--gt-mode flow-threshold`.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum GtModeArg {
    SpriteAlpha,
    FlowThreshold,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    LeakyDorelu,
    LeakyRelu,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DrNormalizationArg {
    GtBox,
    BoxIou,
}

/// Where the events come from and how to read them.
#[derive(Args, Debug)]
pub struct EventSource {
    /// Event file (`.csv` for text, anything else binary).
    pub events: Option<PathBuf>,
    /// Dataset manifest; use with `--sequence` instead of an event path.
    #[arg(long, requires = "sequence", conflicts_with = "events")]
    pub manifest: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    pub sequence: Option<String>,
    /// Sensor width for CSV files without a geometry line.
    #[arg(long, requires = "height")]
    pub width: Option<usize>,
    #[arg(long, requires = "width")]
    pub height: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FitFlags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single seed; shorthand for `--seeds N`.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds; the lowest-loss run is kept.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub n_events: Option<usize>,
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub source: EventSource,
    #[command(flatten)]
    pub fit: FitFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DeblurArgs {
    #[command(flatten)]
    pub source: EventSource,
    /// Flow tensor file, or a result bundle directory holding one.
    #[arg(long, required_unless_present = "fit", conflicts_with = "fit")]
    pub flow: Option<PathBuf>,
    /// Fit the flow first instead of reading it.
    #[arg(long)]
    pub fit: bool,
    #[command(flatten)]
    pub fit_flags: FitFlags,
    /// Reference time in the normalized window.
    #[arg(long, default_value_t = 0.0)]
    pub t_ref: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// A result bundle, or a directory of bundles named by sequence.
    pub results: PathBuf,
    /// A dataset directory with `manifest.json`, or a directory holding
    /// `gt_mask.pgm`.
    pub gt: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dr_normalization: Option<DrNormalizationArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VoxelizeArgs {
    #[command(flatten)]
    pub source: EventSource,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Output tensor file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RenderFlowArgs {
    pub flow: PathBuf,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input files.
    Usage(String),
    /// Failure while computing.
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Segment(a) => commands::segment(a),
        Command::Deblur(a) => commands::deblur(a),
        Command::Eval(a) => commands::eval(a),
        Command::Voxelize(a) => commands::voxelize(a),
        Command::RenderFlow(a) => commands::render_flow(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
