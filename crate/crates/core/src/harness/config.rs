use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::adapters::AdapterConfig;
use crate::nn::ToyModelConfig;
use crate::taskgen::{Dims, TaskKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub dims: Dims,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Sample counts are split evenly across these tasks.
    pub tasks: Vec<TaskSpec>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            tasks: vec![
                TaskSpec { kind: TaskKind::CellRetrieval, dims: Dims::fixed(3, 3) },
                TaskSpec { kind: TaskKind::HierRetrieval, dims: Dims::fixed(2, 2) },
            ],
            train: 2000,
            val: 200,
            test: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_grad_norm: Option<f64>,
    /// Seeds the data shuffle and dropout streams.
    pub seed: u64,
    pub max_answer_tokens: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 10,
            batch_size: 16,
            grad_accum: 1,
            max_grad_norm: Some(1.0),
            seed: 0,
            max_answer_tokens: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// `vocab_size` is replaced by the size of the vocabulary built from
    /// the training split.
    pub model: ToyModelConfig,
    pub adapter: AdapterConfig,
    pub data: DataConfig,
    pub optim: OptimConfig,
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self, HarnessError> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        Ok(toml::to_string(self)?)
    }

    /// Hex SHA-256 of the TOML rendering.
    pub fn hash(&self) -> Result<String, HarnessError> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let o = &self.optim;
        if o.lr.is_nan() || o.lr <= 0.0 || o.batch_size == 0 || o.grad_accum == 0 || o.max_answer_tokens == 0 {
            return Err(HarnessError::Config("lr, batch_size, grad_accum and max_answer_tokens must be positive".into()));
        }
        if o.weight_decay < 0.0 || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps.is_nan() || o.eps <= 0.0 {
            return Err(HarnessError::Config("bad optimizer constants".into()));
        }
        if matches!(o.max_grad_norm, Some(n) if n.is_nan() || n <= 0.0) {
            return Err(HarnessError::Config("max_grad_norm must be positive".into()));
        }
        if self.data.tasks.is_empty() || self.data.train == 0 || self.data.test == 0 {
            return Err(HarnessError::Config("data needs at least one task and non-empty train/test splits".into()));
        }
        self.adapter.validate(self.model.n_layers).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}
