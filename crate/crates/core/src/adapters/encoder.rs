//! Position-independent encoder for `[TAB]`, `[ROW]` and `[CELL]`.
//!
//! Ordinary tokens keep their frozen word embedding. Special tokens are looked
//! up in a small trainable table and, for the p-tuning style encoder, passed
//! through a trainable linear map. The output depends only on which special
//! token it is, never on where it occurs.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::AdapterError;
use crate::nn::Scalar;
use crate::tok::special_of;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Embedding table followed by a linear layer.
    PTuning,
    /// Bare embedding table.
    PromptTuning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecialEncoder<T> {
    pub kind: EncoderKind,
    /// 3 × d_model, rows ordered TAB, ROW, CELL.
    pub emb: Array2<T>,
    /// d_model × d_model (p-tuning only).
    pub linear_w: Option<Array2<T>>,
    pub linear_b: Option<Array1<T>>,
}

impl<T: Scalar> SpecialEncoder<T> {
    /// Encoder outputs for the three special tokens, 3 × d_model.
    pub fn outputs(&self) -> Array2<T> {
        match (&self.linear_w, &self.linear_b) {
            (Some(w), Some(b)) => self.emb.dot(&w.t()) + b,
            _ => self.emb.clone(),
        }
    }

    /// Accumulates parameter gradients given d(outputs), 3 × d_model.
    pub(crate) fn backward(&self, d_out: &Array2<T>, grad: &mut SpecialEncoder<T>) {
        match (&self.linear_w, &mut grad.linear_w, &mut grad.linear_b) {
            (Some(w), Some(gw), Some(gb)) => {
                *gw += &d_out.t().dot(&self.emb);
                *gb += &d_out.sum_axis(ndarray::Axis(0));
                grad.emb += &d_out.dot(w);
            }
            _ => grad.emb += d_out,
        }
    }
}

/// Input embedding of a single token.
pub fn embed_token<T: Scalar>(
    token_id: usize,
    is_special: bool,
    word_emb: &Array2<T>,
    enc: Option<&SpecialEncoder<T>>,
) -> Result<Array1<T>, AdapterError> {
    if token_id >= word_emb.nrows() {
        return Err(AdapterError::UnknownId(token_id));
    }
    match (is_special.then(|| special_of(token_id)).flatten(), enc) {
        (Some(s), Some(enc)) => Ok(enc.outputs().row(s.index()).to_owned()),
        _ => Ok(word_emb.row(token_id).to_owned()),
    }
}
