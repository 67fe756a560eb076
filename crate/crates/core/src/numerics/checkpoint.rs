//! Versioned binary checkpoint container.
//!
//! ```text
//! magic     8 bytes  "SINFCKPT"
//! version   u32 LE
//! hdr_len   u64 LE
//! header    hdr_len bytes of JSON (tool version, config echo, tensor
//!           names and shapes, optimizer scalars, rng state, step)
//! payload   f32 LE: every parameter in header order, then (if present)
//!           every first moment, then every second moment
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{AdamWConfig, OptimizerState};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SINFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: Vec<u8>,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed().to_vec(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let seed: [u8; 32] =
            self.seed.as_slice().try_into().map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self.word_pos.parse().map_err(|_| Error::Checkpoint("bad rng word position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tool_version: String,
    pub config: serde_json::Value,
    pub params: Vec<(String, Tensor<f32>)>,
    pub optimizer: Option<OptimizerState>,
    pub rng: Option<RngState>,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamWConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tool_version: String,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
    rng: Option<RngState>,
    step: u64,
}

impl Checkpoint {
    pub fn from_store(
        tool_version: &str,
        config: serde_json::Value,
        store: &ParamStore<f32>,
        optimizer: Option<&OptimizerState>,
        rng: Option<&ChaCha8Rng>,
        step: u64,
    ) -> Self {
        Self {
            tool_version: tool_version.to_string(),
            config,
            params: store.ids().map(|id| (store.name(id).to_string(), store.value(id).clone())).collect(),
            optimizer: optimizer.cloned(),
            rng: rng.map(RngState::capture),
            step,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            tool_version: self.tool_version.clone(),
            config: self.config.clone(),
            tensors: self
                .params
                .iter()
                .map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader { config: o.config.clone(), step: o.step }),
            rng: self.rng.clone(),
            step: self.step,
        };
        let hdr = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(hdr.len() + 64);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(hdr.len() as u64).to_le_bytes());
        out.extend_from_slice(&hdr);
        let mut put = |xs: &[f32]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for (_, t) in &self.params {
            put(t.data());
        }
        if let Some(o) = &self.optimizer {
            o.first_moment.iter().for_each(|m| put(m));
            o.second_moment.iter().for_each(|v| put(v));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let hdr_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let hdr_end = 20usize.checked_add(hdr_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..hdr_end])?;
        let mut cursor = hdr_end;
        let mut take = |n: usize| -> Result<Vec<f32>> {
            let end = cursor + n * 4;
            if end > bytes.len() {
                return Err(bad("truncated payload"));
            }
            let v = bytes[cursor..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            cursor = end;
            Ok(v)
        };
        let mut params = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n = e.shape.iter().product();
            params.push((e.name.clone(), Tensor::new(e.shape.clone(), take(n)?)?));
        }
        let optimizer = match header.optimizer {
            None => None,
            Some(h) => {
                let sizes: Vec<usize> = params.iter().map(|(_, t)| t.len()).collect();
                let first_moment = sizes.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
                let second_moment = sizes.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
                Some(OptimizerState { config: h.config, step: h.step, first_moment, second_moment })
            }
        };
        if cursor != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Self { tool_version: header.tool_version, config: header.config, params, optimizer, rng: header.rng, step: header.step })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}
