//! Binary checkpoint format (all integers and floats little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic `DDPOLMCK`                        |
//! | 8      | 4    | format version (u32, currently 1)       |
//! | 12     | 16   | vocab size, window, embed dim, hidden dim (u32 each) |
//! | 28     | 8    | parameter count (u64)                   |
//! | 36     | 8·n  | parameters (f64) in tensor order        |
//!
//! Tensor order: token embeddings (V×d), hidden weights ((k·d)×h), hidden
//! bias (h), output weights (h×V), output bias (V); matrices row-major.

use std::path::Path;

use super::{ModelConfig, ModelParameters};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DDPOLMCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 36;

impl ModelParameters {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.config();
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for dim in [c.vocab_size, c.context_window, c.embed_dim, c.hidden_dim] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for x in self.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Err(Error::Checkpoint(msg.to_string()));
        if bytes.len() < HEADER_LEN {
            return bad("truncated header");
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return bad("bad magic");
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config = ModelConfig {
            vocab_size: u32_at(12) as usize,
            context_window: u32_at(16) as usize,
            embed_dim: u32_at(20) as usize,
            hidden_dim: u32_at(24) as usize,
        };
        config
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n = u64::from_le_bytes(bytes[28..36].try_into().unwrap()) as usize;
        if n != config.parameter_count() {
            return bad("parameter count does not match configuration");
        }
        let body = &bytes[HEADER_LEN..];
        if body.len() != 8 * n {
            return bad("payload length does not match parameter count");
        }
        let data: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return bad("non-finite parameter");
        }
        ModelParameters::from_parts(config, data)
    }
}

pub fn save_checkpoint(params: &ModelParameters, path: &Path) -> Result<()> {
    std::fs::write(path, params.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParameters> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelParameters::from_bytes(&bytes)
}
