//! JSON parameter checkpoints.
//!
//! Layout (`format = "apinn-checkpoint"`, `version = 1`):
//!
//! ```json
//! {
//!   "format": "apinn-checkpoint",
//!   "version": 1,
//!   "layer_dims": [4, 64, 64, 64, 64, 1],
//!   "weights": [[...row-major W_1...], [...W_2...], ...],
//!   "biases": [[...b_1...], [...b_2...], ...],
//!   "seed_lineage": { "init_seed": 1, "train_seed": 2, "iterations": 10000 },
//!   "config": { ... resolved experiment config ... }
//! }
//! ```
//!
//! `serde_json` writes the shortest round-tripping decimal for every `f64`,
//! so a load reproduces the parameters bit for bit.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::NetworkParams;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "apinn-checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SeedLineage {
    pub init_seed: u64,
    pub train_seed: u64,
    pub iterations: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub seed_lineage: SeedLineage,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl Checkpoint {
    pub fn new(params: &NetworkParams, seed_lineage: SeedLineage, config: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: 1,
            layer_dims: params.layer_dims().to_vec(),
            weights: params.weights().iter().map(|w| w.iter().copied().collect()).collect(),
            biases: params.biases().iter().map(|b| b.to_vec()).collect(),
            seed_lineage,
            config,
        }
    }

    pub fn params(&self) -> Result<NetworkParams> {
        let malformed = |reason: String| Error::Malformed {
            path: "checkpoint".into(),
            reason,
        };
        if self.format != CHECKPOINT_FORMAT {
            return Err(malformed(format!("unknown format {:?}", self.format)));
        }
        let mut params = NetworkParams::zeros(&self.layer_dims)?;
        let n = params.weights().len();
        if self.weights.len() != n || self.biases.len() != n {
            return Err(malformed("layer count does not match layer_dims".into()));
        }
        for l in 0..n {
            let (rows, cols) = params.weights()[l].dim();
            params.weights_mut()[l] = Array2::from_shape_vec((rows, cols), self.weights[l].clone())
                .map_err(|e| malformed(format!("layer {l} weights: {e}")))?;
            if self.biases[l].len() != cols {
                return Err(malformed(format!("layer {l} bias length")));
            }
            params.biases_mut()[l] = Array1::from(self.biases[l].clone());
        }
        if !params.is_finite() {
            return Err(malformed("non-finite parameter".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.display().to_string()));
        }
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = NetworkParams::init(&[4, 7, 5, 1], 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        Checkpoint::new(&p, SeedLineage::default(), serde_json::Value::Null)
            .save(&path)
            .unwrap();
        let q = Checkpoint::load(&path).unwrap().params().unwrap();
        let a: Vec<u64> = p.values().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = q.values().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
}
