//! Pipeline orchestration behind the `colortraj` binary.
//!
//! Stages run in a fixed order (synthesize, preprocess, split, train,
//! evaluate) and each one reads the artifacts of the previous stages from the
//! output directory, so any stage can be rerun on its own:
//!
//! ```text
//! <out>/resolved_config.json     fully resolved config
//! <out>/stages.log               one line per completed stage
//! <out>/dataset/                 raw synthetic dataset (manifest + CSV + PPM)
//! <out>/preprocessed/            same samples with smoothed trajectories
//! <out>/splits/<mode>.json       split plans
//! <out>/checkpoints/<mode>_<model>.json
//! <out>/histories/<mode>_<model>.json
//! <out>/evaluations/<mode>_<model>.json
//! <out>/predictions/<mode>_<model>/<sample>.csv
//! <out>/report.json, report.txt  ablation report
//! ```

pub mod config;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use colortraj::ModelKind;
use colortraj::SplitMode;
use thiserror::Error;

pub use config::{Overrides, RunConfig, SplitConfig};
pub use pipeline::{Pipeline, Stage};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("stage {stage} failed: {message}")]
    Data { stage: Stage, message: String },
    #[error("stage {stage} failed: {message}")]
    Training { stage: Stage, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data { .. } => EXIT_DATA,
            CliError::Training { .. } => EXIT_TRAINING,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "colortraj", version, about = "Color-change trajectory prediction pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for the world, the split draw and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of low-frequency DCT coefficients kept.
    #[arg(long, global = true)]
    pub cutoff: Option<usize>,
    /// Training-condition selection: all_unseen or similarity_informed.
    #[arg(long, global = true)]
    pub mode: Option<SplitMode>,
    /// Model for train/evaluate: tabular, multimodal or baseline.
    #[arg(long, global = true)]
    pub modality: Option<ModelKind>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Generate the synthetic dataset.
    Synth,
    /// Low-pass smooth every raw trajectory.
    Preprocess,
    /// Write the zero-shot split plans.
    Split,
    /// Train one model on the split for --mode.
    Train,
    /// Score a trained model on the evaluation conditions.
    Evaluate,
    /// Train and score all five ablation configurations.
    Ablate,
    /// Every stage in order, ending with the ablation report.
    RunAll,
}

/// Resolves the config (file, then flags), validates it, and runs `command`.
pub fn run(common: &CommonArgs, command: Command) -> Result<(), CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: common.seed,
        cutoff: common.cutoff,
        mode: common.mode,
        output_dir: common.out.clone(),
    });
    cfg.validate()?;
    let kind = common.modality.unwrap_or(ModelKind::TabularOnly);
    let p = Pipeline::create(cfg)?;
    match command {
        Command::Synth => p.synth(),
        Command::Preprocess => p.preprocess(),
        Command::Split => p.split(),
        Command::Train => p.train(kind),
        Command::Evaluate => p.evaluate(kind).map(|_| ()),
        Command::Ablate => p.ablate().map(|_| ()),
        Command::RunAll => p.run_all().map(|_| ()),
    }
}
