//! Training, evaluation, gap reduction and multi-variant comparison.

mod compare;
mod config;
mod eval;
mod gap;
mod optim;
mod train;

pub use compare::{compare, CompareConfig, ComparisonReport, GapRow, RunSummary, Stats, VariantRow};
pub use config::{DataConfig, OptimConfig, RunConfig, TaskSpec};
pub use eval::{evaluate, evaluate_with, greedy_decode, normalize_answer, Bucket, EvalReport};
pub use gap::{gap_reduction, GapReport};
pub use optim::{cosine_lr, AdamW};
pub use train::{prepare_data, train, Dataset, EncodedSample, EpochMetrics, RunArtifacts, RunReport};

use thiserror::Error;

use crate::nn::NnError;
use crate::taskgen::TaskError;
use crate::tok::TokError;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("every instance has p_full == p_lora; excluded: {excluded:?}")]
    DegenerateGap { excluded: Vec<usize> },
    #[error("score lists differ in length: {0:?}")]
    LengthMismatch([usize; 3]),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tok(#[from] TokError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
