use serde::{Deserialize, Serialize};

use super::{select_layers, AdapterConfig, AdapterError, EncoderKind};

/// Shape facts parameter accounting needs about a base model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_model: usize,
    pub n_layers: usize,
    /// Total parameter count of the base model.
    pub base_params: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamCount {
    pub count: u64,
    /// `count / base_params`.
    pub fraction: f64,
}

impl ParamCount {
    pub fn percent(&self) -> f64 {
        self.fraction * 100.0
    }
}

/// Exact number of trainable parameters under `cfg`. Adapted projections are
/// the square attention matrices.
pub fn count_trainable(dims: ModelDims, cfg: &AdapterConfig) -> Result<ParamCount, AdapterError> {
    let d = dims.d_model as u64;
    let r = cfg.rank as u64;
    let n_proj = cfg.projections.len() as u64;
    let variant = cfg.variant;

    let mut count = 0u64;
    if variant.trains_base() {
        count = dims.base_params;
    }
    if variant.has_lora() {
        count += dims.n_layers as u64 * n_proj * r * (d + d);
    }
    if variant.uses_2d() {
        let layers = select_layers(&cfg.layer_set, dims.n_layers)?.len() as u64;
        let emb = (cfg.max_rows as u64 + 1 + cfg.max_cols as u64 + 1) * r;
        let emb_per_layer = if cfg.share_index_embeddings { emb } else { emb * n_proj };
        count += layers * (n_proj * d * r + emb_per_layer);
    }
    match variant.encoder() {
        Some(EncoderKind::PTuning) => count += 3 * d + d * d + d,
        Some(EncoderKind::PromptTuning) => count += 3 * d,
        None => {}
    }
    let fraction = if dims.base_params == 0 { 0.0 } else { count as f64 / dims.base_params as f64 };
    Ok(ParamCount { count, fraction })
}
