//! Binary checkpoint: 8-byte magic, `u64` little-endian header length, a
//! JSON header, then every parameter as little-endian `f32`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MViTacModel, ModelConfig};
use crate::data::PairAugmentation;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MVITAC01";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC_STEM: &[u8; 6] = b"MVITAC";

/// Location of one parameter inside the blob, in `f32` elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: ModelConfig,
    pub params: Vec<ParamEntry>,
    pub step: u64,
    pub seeds: BTreeMap<String, u64>,
    /// Preprocessing the encoders were trained under, so evaluation can match it.
    #[serde(default)]
    pub preprocess: Option<PairAugmentation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub blob: Vec<f32>,
}

fn corrupt(offset: usize, reason: impl Into<String>) -> Error {
    Error::CorruptCheckpoint {
        offset: offset as u64,
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn from_model<F: Real>(
        model: &MViTacModel<F>,
        step: u64,
        seeds: BTreeMap<String, u64>,
        preprocess: Option<PairAugmentation>,
    ) -> Self {
        let mut params = Vec::new();
        let mut blob = Vec::with_capacity(model.param_count());
        for (name, t) in model.named_params() {
            params.push(ParamEntry {
                name,
                shape: t.shape().to_vec(),
                offset: blob.len(),
                len: t.numel(),
            });
            blob.extend(t.data().iter().map(|v| v.as_f64() as f32));
        }
        Self {
            header: CheckpointHeader {
                format_version: CHECKPOINT_VERSION,
                model: model.config().clone(),
                params,
                step,
                seeds,
                preprocess,
            },
            blob,
        }
    }

    /// Rebuilds the model; every parameter of the configured architecture must be present.
    pub fn to_model(&self) -> Result<MViTacModel<f32>> {
        let mut model = MViTacModel::<f32>::init(self.header.model.clone())?;
        let names = model.query_param_names().into_iter().chain(model.key_param_names());
        let table: HashMap<&str, &ParamEntry> = self.header.params.iter().map(|e| (e.name.as_str(), e)).collect();
        for (name, slot) in names.collect::<Vec<_>>().into_iter().zip(model.all_params_mut()) {
            let entry = table
                .get(name.as_str())
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter '{name}'")))?;
            if entry.shape != slot.shape() {
                return Err(Error::conform("checkpoint parameter", slot.shape(), &entry.shape));
            }
            *slot = Tensor::from_vec(entry.shape.clone(), self.blob[entry.offset..entry.offset + entry.len].to_vec())?;
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.blob.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.blob {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(corrupt(bytes.len(), "file shorter than the magic"));
        }
        let magic = &bytes[..8];
        if magic != CHECKPOINT_MAGIC {
            if magic.starts_with(MAGIC_STEM) {
                return Err(Error::UnsupportedVersion {
                    found: String::from_utf8_lossy(&magic[6..]).into_owned(),
                    expected: format!("{CHECKPOINT_VERSION:02}"),
                });
            }
            return Err(corrupt(0, "bad magic"));
        }
        let len_bytes: [u8; 8] = bytes
            .get(8..16)
            .ok_or_else(|| corrupt(bytes.len(), "truncated header length"))?
            .try_into()
            .expect("8 bytes");
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| corrupt(bytes.len(), format!("truncated header of {header_len} bytes")))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[16..header_end]).map_err(|e| corrupt(16 + e.column(), e.to_string()))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: header.format_version.to_string(),
                expected: CHECKPOINT_VERSION.to_string(),
            });
        }
        let body = &bytes[header_end..];
        if body.len() % 4 != 0 {
            return Err(corrupt(bytes.len(), "parameter blob is not a whole number of f32 values"));
        }
        let blob: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        for e in &header.params {
            let end = e.offset + e.len;
            if end > blob.len() {
                return Err(corrupt(
                    bytes.len(),
                    format!("parameter '{}' needs bytes up to {}", e.name, header_end + 4 * end),
                ));
            }
            if e.shape.iter().product::<usize>() != e.len {
                return Err(corrupt(16, format!("parameter '{}' shape does not match its length", e.name)));
            }
        }
        Ok(Self { header, blob })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
