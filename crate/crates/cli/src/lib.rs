//! Command-line experiment driver. Every command writes a [`RunManifest`]
//! next to its outputs; `uda3d replay` re-runs one and compares the files.

pub mod config;
pub mod manifest;
pub mod plot;

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::run;
pub use config::Config;
pub use manifest::RunManifest;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRAIN: i32 = 3;

/// Split file names inside a data directory.
pub const SOURCE_SPLIT: &str = "source.bin";
pub const TARGET_SPLIT: &str = "target.bin";
pub const TARGET_VAL_SPLIT: &str = "target_val.bin";

/// Header of every per-epoch loss CSV.
pub const LOSS_HEADER: &str = "stage,epoch,steps,lr,det_cls,det_reg,det_refine,det,text,img,st,total,pseudo_labels";

#[derive(Debug, Parser)]
#[command(name = "uda3d", version, about = "Synthetic LiDAR domain adaptation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the source, target and held-out target splits.
    GenData(GenDataArgs),
    /// Supervised training on the source split.
    Pretrain(PretrainArgs),
    /// Self-training on the unlabeled target split from a checkpoint.
    Selftrain(SelftrainArgs),
    /// AP of a checkpoint on a labeled split.
    Eval(EvalArgs),
    /// Component and stage ablation over several seeds.
    Ablation(AblationArgs),
    /// SVG chart of a loss CSV or an ablation summary.
    Plot(PlotArgs),
    /// Re-run the command recorded in a manifest and compare its outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config; defaults are used for anything it leaves out.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Overrides `data.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SelftrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Pre-trained checkpoint.
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Split file name inside the data directory.
    #[arg(long, default_value = TARGET_VAL_SPLIT)]
    pub split: String,
    /// Bucket edges in meters, e.g. `0,30,60,150`.
    #[arg(long)]
    pub range_buckets: Option<String>,
    /// Source-only AP as `BEV[,3D]`, for the closed gap.
    #[arg(long, requires = "oracle_ap")]
    pub source_ap: Option<String>,
    /// Oracle AP as `BEV[,3D]`, for the closed gap.
    #[arg(long, requires = "source_ap")]
    pub oracle_ap: Option<String>,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Number of seeds (0..N); overrides `ablation.seeds`.
    #[arg(long, conflicts_with = "seed")]
    pub seeds: Option<u64>,
    /// Run a single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict to the named runs (a, b, c, d, e, f, pre_only, self_only).
    #[arg(long)]
    pub only: Vec<String>,
    /// Overrides the epoch count of both stages.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Parallel training jobs; defaults to the number of cores.
    #[arg(long, env = "UDA3D_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// A loss CSV or an ablation `summary.json`.
    #[arg(long)]
    pub input: PathBuf,
    /// SVG file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Where to re-run; defaults to `<out_dir>-replay`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// An error together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
    fn train(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: EXIT_USAGE, error: e.into() })
    }
    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: EXIT_DATA, error: e.into() })
    }
    fn train(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: EXIT_TRAIN, error: e.into() })
    }
}
