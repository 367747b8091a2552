//! Additive pre-softmax attention bias for the attention-mask controls.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::AdapterError;
use crate::table::StructuralIndexMap;

/// Added to the logit of a pair of tokens in the same cell.
pub const SAME_CELL_BIAS: f64 = 1.0;
/// Added (v2 only) to a pair in the same row or column but different cells.
pub const SAME_LINE_BIAS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasVariant {
    /// Same-cell amplification only.
    V1,
    /// Same-cell plus same-row/column amplification.
    V2,
}

/// L × L additive logits; `-inf` strictly above the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBias {
    pub logits: Array2<f64>,
}

impl AttentionBias {
    /// Plain causal mask: zero on and below the diagonal.
    pub fn causal(len: usize) -> Self {
        let logits = Array2::from_shape_fn((len, len), |(t, s)| if s > t { f64::NEG_INFINITY } else { 0.0 });
        Self { logits }
    }

    pub fn len(&self) -> usize {
        self.logits.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.logits[[t, s]]
    }
}

/// Causal mask plus structural amplification between table tokens. Only
/// tokens inside a cell (row > 0 and col > 0) take part; every other pair
/// stays at 0.
pub fn build_structural_attention_bias(
    index_map: &StructuralIndexMap,
    variant: BiasVariant,
    len: usize,
) -> Result<AttentionBias, AdapterError> {
    if index_map.len() != len {
        return Err(AdapterError::ShapeMismatch(format!("index map has {} tokens, expected {len}", index_map.len())));
    }
    let mut bias = AttentionBias::causal(len);
    for t in 0..len {
        let Some((tr, tc)) = index_map.cell_of(t) else { continue };
        for s in 0..=t {
            let Some((sr, sc)) = index_map.cell_of(s) else { continue };
            let add = if (tr, tc) == (sr, sc) {
                SAME_CELL_BIAS
            } else if variant == BiasVariant::V2 && (tr == sr || tc == sc) {
                SAME_LINE_BIAS
            } else {
                0.0
            };
            bias.logits[[t, s]] += add;
        }
    }
    Ok(bias)
}
