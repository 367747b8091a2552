use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::AdapterError;

/// Layer subset for the 2D term, written as `all`, `first-half`,
/// `second-half`, `even`, `odd`, `quarter-K` (K in 1..=4) or a comma
/// separated list such as `0,2,3`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LayerSpec {
    #[default]
    All,
    FirstHalf,
    SecondHalf,
    Even,
    Odd,
    Quarter(usize),
    Explicit(Vec<usize>),
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::All => f.write_str("all"),
            LayerSpec::FirstHalf => f.write_str("first-half"),
            LayerSpec::SecondHalf => f.write_str("second-half"),
            LayerSpec::Even => f.write_str("even"),
            LayerSpec::Odd => f.write_str("odd"),
            LayerSpec::Quarter(k) => write!(f, "quarter-{k}"),
            LayerSpec::Explicit(v) => {
                let parts: Vec<String> = v.iter().map(|i| i.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl FromStr for LayerSpec {
    type Err = AdapterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |reason: &str| AdapterError::BadSpec { spec: s.to_string(), reason: reason.to_string() };
        let spec = match s.trim() {
            "all" => LayerSpec::All,
            "first-half" => LayerSpec::FirstHalf,
            "second-half" => LayerSpec::SecondHalf,
            "even" => LayerSpec::Even,
            "odd" => LayerSpec::Odd,
            other => {
                if let Some(k) = other.strip_prefix("quarter-") {
                    let k: usize = k.parse().map_err(|_| bad("quarter index is not a number"))?;
                    if !(1..=4).contains(&k) {
                        return Err(bad("quarter index must be 1..=4"));
                    }
                    LayerSpec::Quarter(k)
                } else {
                    let list: Result<Vec<usize>, _> = other.split(',').map(|p| p.trim().parse::<usize>()).collect();
                    LayerSpec::Explicit(list.map_err(|_| bad("expected a keyword or a list of layer indices"))?)
                }
            }
        };
        Ok(spec)
    }
}

impl Serialize for LayerSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LayerSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Resolves a spec to sorted layer indices for a model with `n_layers`.
pub fn select_layers(spec: &LayerSpec, n_layers: usize) -> Result<Vec<usize>, AdapterError> {
    let bad = |reason: String| AdapterError::BadSpec { spec: spec.to_string(), reason };
    let half = n_layers / 2;
    let layers: Vec<usize> = match spec {
        LayerSpec::All => (0..n_layers).collect(),
        LayerSpec::FirstHalf => (0..half).collect(),
        LayerSpec::SecondHalf => (half..n_layers).collect(),
        LayerSpec::Even => (0..n_layers).step_by(2).collect(),
        LayerSpec::Odd => (1..n_layers).step_by(2).collect(),
        LayerSpec::Quarter(k) => {
            if !(1..=4).contains(k) {
                return Err(bad("quarter index must be 1..=4".into()));
            }
            ((k - 1) * n_layers / 4..k * n_layers / 4).collect()
        }
        LayerSpec::Explicit(v) => {
            let mut v = v.clone();
            v.sort_unstable();
            v.dedup();
            if let Some(&i) = v.iter().find(|&&i| i >= n_layers) {
                return Err(bad(format!("layer {i} out of range for {n_layers} layers")));
            }
            v
        }
    };
    if layers.is_empty() {
        return Err(bad(format!("selects no layers of {n_layers}")));
    }
    Ok(layers)
}
