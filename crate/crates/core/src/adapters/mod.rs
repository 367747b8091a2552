//! Parameter-efficient mechanisms: LoRA, 2D LoRA over row/column index
//! embeddings, the special-token encoder, and the control variants that
//! inject table structure by other routes.

mod attn_bias;
mod count;
mod encoder;
mod layers;
mod lora;
mod posemb;

pub use attn_bias::{build_structural_attention_bias, AttentionBias, BiasVariant, SAME_CELL_BIAS, SAME_LINE_BIAS};
pub use count::{count_trainable, ModelDims, ParamCount};
pub use encoder::{embed_token, EncoderKind, SpecialEncoder};
pub use layers::{select_layers, LayerSpec};
pub use lora::{lora2d_forward, lora_forward, IndexEmbeddings, LoraParams, ProjAdapter};
pub use posemb::{sinusoid, sinusoidal_rowcol_embedding};

pub(crate) use lora::{adapted_backward, adapted_forward, ProjCache, ProjGrads};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tok::TableEncoding;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdapterError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index ({row}, {col}) outside embedding tables ({max_rows}, {max_cols})")]
    IndexOverflow { row: usize, col: usize, max_rows: usize, max_cols: usize },
    #[error("unknown token id {0}")]
    UnknownId(usize),
    #[error("bad layer spec {spec:?}: {reason}")]
    BadSpec { spec: String, reason: String },
    #[error("invalid adapter config: {0}")]
    InvalidConfig(String),
}

/// Which adapted run is being configured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "lora")]
    Lora,
    #[serde(rename = "tablelora")]
    TableLora,
    #[serde(rename = "lora+encoder-only")]
    LoraEncoderOnly,
    #[serde(rename = "lora+2d-only")]
    Lora2dOnly,
    #[serde(rename = "control-posemb")]
    ControlPosemb,
    #[serde(rename = "control-attnmask-v1")]
    ControlAttnmaskV1,
    #[serde(rename = "control-attnmask-v2")]
    ControlAttnmaskV2,
    #[serde(rename = "control-posstring")]
    ControlPosstring,
    #[serde(rename = "control-promptuning-encoder")]
    ControlPromptTuningEncoder,
    /// No adapters; every base parameter is trainable.
    #[serde(rename = "full-finetune")]
    FullFinetune,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Lora,
        Variant::TableLora,
        Variant::LoraEncoderOnly,
        Variant::Lora2dOnly,
        Variant::ControlPosemb,
        Variant::ControlAttnmaskV1,
        Variant::ControlAttnmaskV2,
        Variant::ControlPosstring,
        Variant::ControlPromptTuningEncoder,
        Variant::FullFinetune,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lora => "lora",
            Variant::TableLora => "tablelora",
            Variant::LoraEncoderOnly => "lora+encoder-only",
            Variant::Lora2dOnly => "lora+2d-only",
            Variant::ControlPosemb => "control-posemb",
            Variant::ControlAttnmaskV1 => "control-attnmask-v1",
            Variant::ControlAttnmaskV2 => "control-attnmask-v2",
            Variant::ControlPosstring => "control-posstring",
            Variant::ControlPromptTuningEncoder => "control-promptuning-encoder",
            Variant::FullFinetune => "full-finetune",
        }
    }

    pub fn has_lora(self) -> bool {
        self != Variant::FullFinetune
    }

    pub fn trains_base(self) -> bool {
        self == Variant::FullFinetune
    }

    pub fn uses_2d(self) -> bool {
        matches!(self, Variant::TableLora | Variant::Lora2dOnly)
    }

    pub fn encoder(self) -> Option<EncoderKind> {
        match self {
            Variant::TableLora | Variant::LoraEncoderOnly => Some(EncoderKind::PTuning),
            Variant::ControlPromptTuningEncoder => Some(EncoderKind::PromptTuning),
            _ => None,
        }
    }

    pub fn attention_bias(self) -> Option<BiasVariant> {
        match self {
            Variant::ControlAttnmaskV1 => Some(BiasVariant::V1),
            Variant::ControlAttnmaskV2 => Some(BiasVariant::V2),
            _ => None,
        }
    }

    pub fn uses_posemb(self) -> bool {
        self == Variant::ControlPosemb
    }

    /// How the table is written into the token stream for this variant.
    pub fn table_encoding(self) -> TableEncoding {
        match self {
            Variant::ControlPosstring => TableEncoding::PositionStrings,
            _ => TableEncoding::Special,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = AdapterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| AdapterError::InvalidConfig(format!("unknown variant {s:?}")))
    }
}

/// Attention projection an adapter can be attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Query,
    Key,
    Value,
    Output,
}

impl Projection {
    pub const ALL: [Projection; 4] = [Projection::Query, Projection::Key, Projection::Value, Projection::Output];

    /// Short name used in checkpoint tensor names.
    pub fn short(self) -> &'static str {
        match self {
            Projection::Query => "q",
            Projection::Key => "k",
            Projection::Value => "v",
            Projection::Output => "o",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub variant: Variant,
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub projections: Vec<Projection>,
    /// Layers that carry the 2D term; the remaining layers get plain LoRA.
    pub layer_set: LayerSpec,
    pub max_rows: usize,
    pub max_cols: usize,
    /// Share one pair of index-embedding tables across all adapted
    /// projections of a layer (otherwise one pair per projection).
    pub share_index_embeddings: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            variant: Variant::TableLora,
            rank: 8,
            alpha: 16.0,
            dropout: 0.1,
            projections: vec![Projection::Key, Projection::Value],
            layer_set: LayerSpec::All,
            max_rows: 600,
            max_cols: 40,
            share_index_embeddings: true,
        }
    }
}

impl AdapterConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self, n_layers: usize) -> Result<(), AdapterError> {
        if self.rank == 0 {
            return Err(AdapterError::InvalidConfig("rank must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(AdapterError::InvalidConfig(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.max_rows == 0 || self.max_cols == 0 {
            return Err(AdapterError::InvalidConfig("index caps must be positive".into()));
        }
        if self.variant.has_lora() && self.projections.is_empty() {
            return Err(AdapterError::InvalidConfig("no adapted projections".into()));
        }
        if self.variant.uses_2d() {
            select_layers(&self.layer_set, n_layers)?;
        }
        Ok(())
    }

    pub fn caps(&self) -> crate::table::IndexCaps {
        crate::table::IndexCaps { max_rows: self.max_rows, max_cols: self.max_cols }
    }
}
