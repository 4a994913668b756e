use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::AdamState;
use super::params::{LmConfig, LmParams};
use super::scalar::Scalar;
use super::train::TrainConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PAGCKPT\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dtype: String,
    pub config: LmConfig,
    pub train: Option<TrainConfig>,
    pub step: u64,
    pub num_params: usize,
    pub has_optimizer: bool,
    /// Hash of the vocabulary the model was trained on, when known.
    pub vocab_hash: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<F> {
    pub header: CheckpointHeader,
    pub params: LmParams<F>,
    pub optimizer: Option<AdamState<F>>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn new(
        params: LmParams<F>,
        optimizer: Option<AdamState<F>>,
        train: Option<TrainConfig>,
        vocab_hash: Option<String>,
    ) -> Self {
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            dtype: F::DTYPE.to_string(),
            config: params.config.clone(),
            train,
            step: optimizer.as_ref().map_or(0, |o| o.step),
            num_params: params.len(),
            has_optimizer: optimizer.is_some(),
            vocab_hash,
        };
        Self {
            header,
            params,
            optimizer,
        }
    }

    /// Magic, u32 header length, JSON header, then the parameter vector and
    /// (optionally) the two moment vectors, little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let n = self.params.len();
        let arrays = if self.optimizer.is_some() { 3 } else { 1 };
        let mut out = Vec::with_capacity(12 + header.len() + arrays * n * F::BYTES);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for &x in &self.params.data {
            x.put_le(&mut out);
        }
        if let Some(o) = &self.optimizer {
            for &x in o.m.iter().chain(&o.v) {
                x.put_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let hbytes = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(hbytes)?;
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", header.version)));
        }
        if header.dtype != F::DTYPE {
            return Err(bad(format!(
                "stored as {}, requested {}",
                header.dtype,
                F::DTYPE
            )));
        }
        let n = header.num_params;
        let arrays = if header.has_optimizer { 3 } else { 1 };
        let body = &bytes[12 + hlen..];
        if body.len() != arrays * n * F::BYTES {
            return Err(bad(format!(
                "expected {} payload bytes, found {}",
                arrays * n * F::BYTES,
                body.len()
            )));
        }
        let read = |k: usize| -> Vec<F> {
            body[k * n * F::BYTES..(k + 1) * n * F::BYTES]
                .chunks_exact(F::BYTES)
                .map(F::get_le)
                .collect()
        };
        let params = LmParams::from_data(header.config.clone(), read(0))?;
        if !params.all_finite() {
            return Err(bad("non-finite parameter".into()));
        }
        let optimizer = header.has_optimizer.then(|| AdamState {
            step: header.step,
            m: read(1),
            v: read(2),
        });
        Ok(Self {
            header,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
