//! Checkpoint file layout, all integers little-endian:
//!
//! | bytes            | content                                   |
//! |------------------|-------------------------------------------|
//! | 0..8             | magic `MCMODEL\0`                          |
//! | 8..12            | `u32` format version                       |
//! | 12..20           | `u64` header length `n`                    |
//! | 20..20+n         | UTF-8 JSON header                          |
//! | 20+n..           | `f32` payload                              |
//!
//! The header holds `config`, `norm_stats`, `eval_stats`, `skeleton` and a
//! `params` list of `{name, shape, offset}`; `offset` counts `f32` values from
//! the start of the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Checkpoint, ModelConfig, ParamStore};
use crate::error::{Error, Result};
use crate::io::NormStats;
use crate::kinematics::Skeleton;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MCMODEL\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    norm_stats: Option<NormStats>,
    eval_stats: Option<NormStats>,
    skeleton: Option<Skeleton>,
    params: Vec<ParamEntry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let params = self
            .params
            .iter()
            .map(|(name, t)| {
                let e = ParamEntry { name: name.to_string(), shape: t.shape().to_vec(), offset };
                offset += t.len();
                e
            })
            .collect();
        let header = Header {
            config: self.config.clone(),
            norm_stats: self.norm_stats.clone(),
            eval_stats: self.eval_stats.clone(),
            skeleton: self.skeleton.clone(),
            params,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + offset * 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.tensors() {
            t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let n = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(20..20usize.saturating_add(n)).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json)?;
        header.config.validate()?;
        let payload = &bytes[20 + n..];
        if !payload.len().is_multiple_of(4) {
            return Err(bad("payload is not a whole number of f32 values"));
        }
        let values: Vec<f32> =
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let entries = header
            .params
            .into_iter()
            .map(|e| {
                let len: usize = e.shape.iter().product();
                let data =
                    values.get(e.offset..e.offset + len).ok_or_else(|| bad(format!("{} overruns payload", e.name)))?;
                Ok((e.name, Tensor::new(e.shape, data.to_vec())?))
            })
            .collect::<Result<Vec<_>>>()?;
        let params = ParamStore::from_named(&header.config, entries)?;
        if params.num_values() != values.len() {
            return Err(bad("payload size does not match parameter shapes"));
        }
        Ok(Checkpoint::from_parts(header.config, params, header.norm_stats, header.eval_stats, header.skeleton))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
