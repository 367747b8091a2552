//! Table-structure-aware low-rank adaptation on a small decoder-only
//! transformer.
//!
//! The crate is split along the data path:
//!
//! - [`table`]: table model, special-token serialization and structural indices
//! - [`tok`]: word-level vocabulary and model-input assembly
//! - [`nn`]: the transformer, its reverse-mode gradients and a gradient checker
//! - [`adapters`]: LoRA, 2D LoRA, the special-token encoder and control variants
//! - [`taskgen`]: seeded synthetic table tasks
//! - [`harness`]: training, evaluation, comparison runs and run artifacts

pub mod table;
pub mod tok;
pub mod nn;
pub mod adapters;
pub mod taskgen;
pub mod harness;
