//! Checkpoint files: a JSON header plus the parameters as base64-encoded
//! little-endian `f32` values in the order `W_tc, b_tc, W_nsp, b_nsp, W_stp,
//! b_stp`.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{HeadParams, LossWeights, ModelError};
use crate::trainer::TrainConfig;

pub const FORMAT: &str = "segline-checkpoint/1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: HeadParams<f32>,
    /// 1-based epoch the parameters come from.
    pub epoch: usize,
    pub validation_pk: f64,
    pub config_hash: String,
    pub config: TrainConfig,
    /// Topic labels indexed by TC class.
    pub topics: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    d: usize,
    k: usize,
    weights: LossWeights,
    config_hash: String,
    epoch: usize,
    validation_pk: f64,
    config: TrainConfig,
    topics: Vec<String>,
    params: String,
}

/// Hex SHA-256 of the config's canonical JSON form.
pub fn config_hash(config: &TrainConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    Sha256::digest(json.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let mut blob = Vec::with_capacity(self.params.num_params() * 4);
        for tensor in self.params.tensors() {
            for v in tensor {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            format: FORMAT.to_string(),
            d: self.params.d(),
            k: self.params.num_topics(),
            weights: self.config.weights,
            config_hash: self.config_hash.clone(),
            epoch: self.epoch,
            validation_pk: self.validation_pk,
            config: self.config.clone(),
            topics: self.topics.clone(),
            params: STANDARD.encode(blob),
        };
        let mut s = serde_json::to_string_pretty(&header).expect("header serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, CheckpointError> {
        let header: Header = serde_json::from_str(s).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if header.format != FORMAT {
            return Err(CheckpointError::Format(format!("unknown format {:?}", header.format)));
        }
        if !(0.0..=1.0).contains(&header.validation_pk) {
            return Err(CheckpointError::Format(format!("validation_pk {} outside [0, 1]", header.validation_pk)));
        }
        let blob = STANDARD
            .decode(header.params.as_bytes())
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        if blob.len() % 4 != 0 {
            return Err(CheckpointError::Format("parameter blob is not a whole number of f32 values".into()));
        }
        let mut values = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let shapes = HeadParams::<f32>::zeros(header.d, header.k);
        let expected = shapes.num_params();
        if blob.len() / 4 != expected {
            return Err(CheckpointError::Format(format!(
                "expected {expected} parameters for d={}, K={}, found {}",
                header.d,
                header.k,
                blob.len() / 4
            )));
        }
        let lens = shapes.tensors().map(<[f32]>::len);
        let tensors = lens.map(|len| values.by_ref().take(len).collect::<Vec<f32>>());
        let params = HeadParams::from_tensors(header.d, header.k, tensors)?;
        if !params.is_finite() {
            return Err(CheckpointError::Format("non-finite parameter".into()));
        }
        Ok(Checkpoint {
            params,
            epoch: header.epoch,
            validation_pk: header.validation_pk,
            config_hash: header.config_hash,
            config: header.config,
            topics: header.topics,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        let s = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&s)
    }
}
