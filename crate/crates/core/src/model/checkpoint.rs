//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "AVDMODEL"
//! version    u32       1
//! header_len u64
//! header     header_len bytes of UTF-8 JSON:
//!            {"config": ModelConfig, "inference": InferenceSettings,
//!             "tensors": [{"name": str, "shape": [usize]}]}
//! blobs      f64 values of each tensor in header order, row-major
//! ```
//!
//! Tensor order is the sorted parameter-name order, so the byte stream is a
//! pure function of the weights.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EendModel, ModelConfig, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"AVDMODEL";
const VERSION: u32 = 1;

/// Post-processing chosen on validation data; travels with the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceSettings {
    pub activity_threshold: f64,
    pub median_frames: usize,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        InferenceSettings {
            activity_threshold: 0.5,
            median_frames: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EendModel,
    pub inference: InferenceSettings,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    inference: InferenceSettings,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let header = Header {
            config: self.model.config().clone(),
            inference: self.inference,
            tensors: params
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let n_values: usize = params.values().map(Tensor::numel).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 8 * n_values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in params.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::Load(format!("truncated file while reading {what}")));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(8, "magic")? != MAGIC {
            return Err(Error::Load("bad magic, not a model checkpoint".into()));
        }
        let version = u32::from_le_bytes(take(4, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Load(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(take(8, "header length")?.try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(take(header_len, "header")?)
            .map_err(|e| Error::Load(format!("malformed header: {e}")))?;
        let mut params = ParamStore::new();
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = take(
                n.checked_mul(8).ok_or_else(|| Error::Load("tensor too large".into()))?,
                &entry.name,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(entry.shape.clone(), data).map_err(|e| Error::Load(e.to_string()))?;
            params.insert(entry.name.clone(), t);
        }
        if !cur.is_empty() {
            return Err(Error::Load(format!("{} trailing bytes", cur.len())));
        }
        let model = EendModel::from_params(header.config, params).map_err(|e| match e {
            Error::Config(m) => Error::Load(format!("invalid config: {m}")),
            other => other,
        })?;
        Ok(Checkpoint {
            model,
            inference: header.inference,
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes()?).map_err(|e| Error::io("<checkpoint>", e))
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| Error::io("<checkpoint>", e))?;
        Self::from_bytes(&buf)
    }
}

pub fn save_model(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
