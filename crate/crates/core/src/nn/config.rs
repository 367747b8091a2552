use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rng_seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self { n_layers: 4, d_model: 128, n_heads: 4, d_ff: 512, vocab_size: 512, max_seq_len: 256, rng_seed: 0 }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let counts = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(NnError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(NnError::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Parameter count of the base model.
    pub fn base_params(&self) -> u64 {
        let (d, f) = (self.d_model as u64, self.d_ff as u64);
        let per_layer = 4 * d * d + 2 * d * f + f + d + 4 * d;
        (self.vocab_size as u64 + self.max_seq_len as u64) * d + self.n_layers as u64 * per_layer + 2 * d
    }
}
