use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Mean of `(p_full - p_variant) / (p_full - p_lora)`.
    pub remaining_gap_fraction: f64,
    /// `1 - remaining_gap_fraction`.
    pub closed_fraction: f64,
    pub used: usize,
    /// Indices where `p_full == p_lora`, left out of the mean.
    pub excluded: Vec<usize>,
}

pub fn gap_reduction(p_full: &[f64], p_lora: &[f64], p_variant: &[f64]) -> Result<GapReport, HarnessError> {
    if p_full.len() != p_lora.len() || p_full.len() != p_variant.len() {
        return Err(HarnessError::LengthMismatch([p_full.len(), p_lora.len(), p_variant.len()]));
    }
    let mut excluded = Vec::new();
    let mut sum = 0.0;
    let mut used = 0;
    for i in 0..p_full.len() {
        let denom = p_full[i] - p_lora[i];
        if denom == 0.0 {
            excluded.push(i);
            continue;
        }
        sum += (p_full[i] - p_variant[i]) / denom;
        used += 1;
    }
    if used == 0 {
        return Err(HarnessError::DegenerateGap { excluded });
    }
    let remaining = sum / used as f64;
    Ok(GapReport { remaining_gap_fraction: remaining, closed_fraction: 1.0 - remaining, used, excluded })
}
