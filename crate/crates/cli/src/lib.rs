//! Command-line driver: grid inspection, projections, training,
//! evaluation and micro-benchmarks.

pub mod batch;
pub mod bench;
pub mod eval;
pub mod train;

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use stm_core::StmError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Core(StmError),
    Usage(String),
    /// Some items of a batch failed; the rest were written.
    Partial { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(StmError::Config(_)) => EXIT_USAGE,
            CliError::Core(StmError::Numeric(_)) => EXIT_NUMERIC,
            CliError::Core(_) | CliError::Partial { .. } => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => f.write_str(m),
            CliError::Partial { failed, total } => write!(f, "{failed} of {total} inputs failed"),
        }
    }
}

impl From<StmError> for CliError {
    fn from(e: StmError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(StmError::Io(e))
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "stm", version, about = "HEALPix spherical transformer toolkit")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// HEALPix level used by the command.
    #[arg(long, global = true)]
    pub level: Option<u32>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inspect the pixelisation.
    #[command(subcommand)]
    Grid(GridCmd),
    /// Turn meshes, panoramas and digits into spherical signals.
    #[command(subcommand)]
    Project(ProjectCmd),
    /// Spherical transformer utilities.
    #[command(subcommand)]
    Stm(StmCmd),
    /// Train a network.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Evaluate predictions or trained networks.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Micro-benchmarks.
    #[command(subcommand)]
    Bench(BenchCmd),
}

#[derive(Debug, Subcommand)]
pub enum GridCmd {
    /// Pixel counts and neighbourhood statistics.
    Info,
    /// The eight neighbours of one pixel.
    Neighbors {
        #[arg(long)]
        pix: usize,
    },
    /// Pixel centres as CSV.
    Dump {
        /// Output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Render resolution in pixels.
    #[arg(long, default_value_t = 128)]
    pub res: usize,
    /// Camera distance from the origin.
    #[arg(long, default_value_t = 3.0)]
    pub distance: f64,
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 40.0)]
    pub fov: f64,
}

#[derive(Debug, Subcommand)]
pub enum ProjectCmd {
    /// Model and convex-hull ray depth (6 channels).
    Depth {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gray renders re-projected onto the sphere (1 channel).
    Render {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        render: RenderArgs,
        /// Write the 12 views as PGM files into this directory.
        #[arg(long)]
        dump_views: Option<PathBuf>,
    },
    /// Resample an equirectangular PPM/PGM image.
    Equirect {
        #[arg(long)]
        img: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// bilinear or nearest.
        #[arg(long, default_value = "bilinear")]
        mode: String,
        /// Store the single-channel image as u8 labels (needs nearest mode).
        #[arg(long)]
        labels: bool,
    },
    /// Project one MNIST digit onto the northern cap.
    Digit {
        /// IDX image file.
        #[arg(long)]
        idx: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project every OFF file of a directory.
    Batch {
        #[arg(long)]
        mesh_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// depth, render or both.
        #[arg(long, default_value = "depth")]
        kind: String,
        /// Recompute outputs that already exist.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        render: RenderArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum StmCmd {
    /// Gather a signal into its 3 x 3n patch layout.
    Gather {
        #[arg(long)]
        input: PathBuf,
        /// PGM picture of one channel, min-max scaled.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        channel: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum TrainCmd {
    /// Spherical MNIST classifier.
    Smnist(TrainArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding the four MNIST IDX files.
    #[arg(long, default_value = "data/mnist")]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Model description overriding the default classifier.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    /// Use only the first N training digits.
    #[arg(long)]
    pub limit_train: Option<usize>,
    /// Use only the first N test digits.
    #[arg(long)]
    pub limit_test: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Digit classification accuracy of a checkpoint.
    Cls {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "data/mnist/t10k-images-idx3-ubyte")]
        images: PathBuf,
        #[arg(long, default_value = "data/mnist/t10k-labels-idx1-ubyte")]
        labels: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Per-class IoU, mIoU and pixel accuracy.
    Seg {
        /// Ground-truth label .sphs files.
        #[arg(long)]
        labels_dir: PathBuf,
        /// Predicted label .sphs files, paired by name.
        #[arg(long, conflicts_with_all = ["signals_dir", "config", "checkpoint"])]
        predictions_dir: Option<PathBuf>,
        /// Input signals, paired by name, run through --config/--checkpoint.
        #[arg(long, requires_all = ["config", "checkpoint"])]
        signals_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Class count when evaluating stored predictions.
        #[arg(long)]
        classes: Option<usize>,
        /// Write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    /// Gather and 3x3 convolution throughput.
    Gather {
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value_t = 10)]
        iterations: usize,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
