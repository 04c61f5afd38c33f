//! File layout: 8-byte little-endian header length, a UTF-8 JSON header
//! `{"tensors": {name: {shape, dtype, offset, nbytes}}, "meta": {...}}`,
//! then the raw little-endian f32 payload in header order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::net::{ModelConfig, Phase, RestorationModel};
use crate::{ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the payload.
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// Completed iterations.
    pub iter: usize,
    pub phase: Phase,
    pub seed: u64,
    /// Position of the training generator, decimal (it is a u128).
    pub rng_word_pos: String,
    pub adam_steps: BTreeMap<String, u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// Named tensors (parameters and `adamw.m.*` / `adamw.v.*` moments) plus
/// training metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor<f32>>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    tensors: BTreeMap<String, TensorEntry>,
    meta: CheckpointMeta,
}

/// Prefixes of the optimizer-moment tensors stored next to the parameters.
pub const ADAM_M_PREFIX: &str = "adamw.m.";
pub const ADAM_V_PREFIX: &str = "adamw.v.";

impl Checkpoint {
    fn is_moment(name: &str) -> bool {
        name.starts_with(ADAM_M_PREFIX) || name.starts_with(ADAM_V_PREFIX)
    }

    /// The model parameters, without optimizer state.
    pub fn params(&self) -> Result<ParamStore<f32>> {
        let mut params = ParamStore::new();
        for (name, t) in self.tensors.iter().filter(|(n, _)| !Self::is_moment(n)) {
            params.insert(name.clone(), t.clone())?;
        }
        Ok(params)
    }

    /// The model stored in this checkpoint, checked against its config.
    pub fn model(&self) -> Result<RestorationModel<f32>> {
        RestorationModel::from_params(self.meta.model.clone(), self.meta.train.ablation.clone(), self.params()?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = BTreeMap::new();
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let nbytes = 4 * t.numel() as u64;
            entries.insert(
                name.clone(),
                TensorEntry {
                    shape: t.shape().to_vec(),
                    dtype: "f32".into(),
                    offset,
                    nbytes,
                },
            );
            offset += nbytes;
        }
        let header = serde_json::to_vec(&Header {
            tensors: entries,
            meta: self.meta.clone(),
        })
        .map_err(|e| Error::Format {
            offset: 8,
            message: format!("cannot serialise header: {e}"),
        })?;
        let mut out = Vec::with_capacity(8 + header.len() + offset as usize);
        out.extend((header.len() as u64).to_le_bytes());
        out.extend(&header);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: u64, message: String| Error::Format { offset, message };
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| fail(0, format!("file is {} bytes, shorter than the length prefix", bytes.len())))?;
        let header_len = u64::from_le_bytes(len_bytes);
        let payload_start = 8u64
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len() as u64)
            .ok_or_else(|| fail(0, format!("header length {header_len} exceeds file size {}", bytes.len())))?;
        let header: Header = serde_json::from_slice(&bytes[8..payload_start as usize]).map_err(|e| {
            fail(
                8 + e.column() as u64,
                format!("malformed header (line {}, column {}): {e}", e.line(), e.column()),
            )
        })?;
        let payload = &bytes[payload_start as usize..];
        let mut tensors = BTreeMap::new();
        for (name, entry) in header.tensors {
            let at = payload_start + entry.offset;
            if entry.dtype != "f32" {
                return Err(fail(at, format!("tensor {name}: unsupported dtype {}", entry.dtype)));
            }
            let numel: usize = entry.shape.iter().product();
            if entry.nbytes != 4 * numel as u64 {
                return Err(fail(at, format!("tensor {name}: {} bytes for shape {:?}", entry.nbytes, entry.shape)));
            }
            let end = entry.offset.checked_add(entry.nbytes).unwrap_or(u64::MAX);
            if end > payload.len() as u64 {
                return Err(fail(
                    at,
                    format!("tensor {name}: data ends at byte {} but file has {}", payload_start + end, bytes.len()),
                ));
            }
            let data = payload[entry.offset as usize..end as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(entry.shape, data).map_err(|e| fail(at, format!("tensor {name}: {e}")))?;
            tensors.insert(name, t);
        }
        Ok(Self {
            tensors,
            meta: header.meta,
        })
    }
}

/// Write atomically: a sibling temporary file is renamed over `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

/// Read and fully validate a checkpoint; nothing is returned on error.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
