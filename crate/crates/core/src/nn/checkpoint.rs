//! Checkpoint = `manifest.json` (tensor names, shapes, dtype, configs) plus
//! `tensors.bin`, the tensors as little-endian f32 in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{cast, Model, NnError, Scalar, ToyModelConfig};
use crate::adapters::AdapterConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub model: ToyModelConfig,
    pub adapter: AdapterConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, dir: &Path, config_hash: Option<&str>) -> Result<Manifest, NnError> {
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in model.named_tensors() {
        tensors.push(TensorEntry { name, shape: t.shape().to_vec() });
        for v in t.iter() {
            bytes.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    let manifest = Manifest {
        dtype: "f32".into(),
        config_hash: config_hash.map(str::to_string),
        model: model.cfg.clone(),
        adapter: model.adapter_cfg.clone(),
        tensors,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(dir.join(TENSORS_FILE), bytes)?;
    Ok(manifest)
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(Model<T>, Manifest), NnError> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.dtype != "f32" {
        return Err(NnError::Checkpoint(format!("unsupported dtype {}", manifest.dtype)));
    }
    let bytes = fs::read(dir.join(TENSORS_FILE))?;
    let mut model = Model::<T>::new(manifest.model.clone(), manifest.adapter.clone())?;
    let mut floats = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    {
        let mut tensors = model.named_tensors_mut();
        if tensors.len() != manifest.tensors.len() {
            return Err(NnError::Checkpoint(format!(
                "manifest lists {} tensors, model has {}",
                manifest.tensors.len(),
                tensors.len()
            )));
        }
        for ((name, t), entry) in tensors.iter_mut().zip(&manifest.tensors) {
            if *name != entry.name || t.shape() != entry.shape.as_slice() {
                return Err(NnError::Checkpoint(format!(
                    "expected {name} {:?}, manifest has {} {:?}",
                    t.shape(),
                    entry.name,
                    entry.shape
                )));
            }
            for v in t.iter_mut() {
                let f = floats.next().ok_or_else(|| NnError::Checkpoint("tensor file too short".into()))?;
                *v = cast(f as f64);
            }
        }
    }
    if floats.next().is_some() || bytes.len() % 4 != 0 {
        return Err(NnError::Checkpoint("tensor file has trailing bytes".into()));
    }
    Ok((model, manifest))
}
