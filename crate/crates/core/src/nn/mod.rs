//! Decoder-only transformer with hand-written reverse-mode gradients.

mod checkpoint;
mod config;
mod gradcheck;
mod loss;
mod model;
pub mod ops;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, TensorEntry, MANIFEST_FILE, TENSORS_FILE};
pub use config::ToyModelConfig;
pub use gradcheck::{grad_check, relative_error, GradCheckReport, TensorCheck, TensorStatus};
pub use loss::{loss, loss_and_grad};
pub use model::{AdapterParams, BaseParams, ForwardCache, Grads, LayerAdapters, LayerWeights, Model};

use ndarray::NdFloat;
use num_traits::FromPrimitive;
use thiserror::Error;

use crate::adapters::AdapterError;

/// Floating-point element type of a model: `f32` for training, `f64` for
/// gradient checks.
pub trait Scalar: NdFloat + FromPrimitive {}
impl<T: NdFloat + FromPrimitive> Scalar for T {}

pub(crate) fn cast<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("answer mask selects no positions")]
    EmptyAnswerMask,
    #[error("input of {len} tokens exceeds max_seq_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
