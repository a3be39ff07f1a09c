//! Single-file checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "WGLABCK\0"
//! version   u32
//! json_len  u64, then json_len bytes of UTF-8 JSON {"model": ModelConfig, "meta": …}
//! n_blobs   u64
//! per blob: name_len u32, name bytes, ndim u32, ndim × u64 dims, Π dims × f64
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::gpt::GptModel;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"WGLABCK\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Free-form metadata (integers and strings; floats belong in blobs).
    pub meta: serde_json::Value,
    pub blobs: Vec<Blob>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_model(model: &GptModel) -> Self {
        let blobs = model
            .params()
            .iter()
            .map(|p| Blob { name: p.name.clone(), shape: p.tensor.shape().to_vec(), data: p.tensor.data().to_vec() })
            .collect();
        Self { config: model.config().clone(), meta: serde_json::Value::Null, blobs }
    }

    pub fn blob(&self, name: &str) -> Option<&Blob> {
        self.blobs.iter().find(|b| b.name == name)
    }

    /// Rebuilds a model. Fails unless the stored config equals `expected`.
    pub fn restore_model(&self, expected: &ModelConfig) -> Result<GptModel> {
        if &self.config != expected {
            return Err(bad(format!(
                "config mismatch: checkpoint holds {}, expected {}",
                serde_json::to_string(&self.config)?,
                serde_json::to_string(expected)?
            )));
        }
        let mut model = GptModel::new(self.config.clone(), 0)?;
        model.load_values(|name| self.blob(name).map(|b| (b.shape.as_slice(), b.data.as_slice())))?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header { model: self.config.clone(), meta: self.meta.clone() })?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.blobs.len() as u64).to_le_bytes());
        for b in &self.blobs {
            out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
            for &d in &b.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let json_len = read_u64(&mut r)? as usize;
        let header: Header = serde_json::from_slice(take(&mut r, json_len)?)?;
        let n = read_u64(&mut r)? as usize;
        let mut blobs = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name_len = read_u32(&mut r)? as usize;
            let name = String::from_utf8(take(&mut r, name_len)?.to_vec()).map_err(|_| bad("blob name is not UTF-8"))?;
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = take(&mut r, count.checked_mul(8).ok_or_else(|| bad("blob too large"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            blobs.push(Blob { name, shape, data });
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes after last blob"));
        }
        Ok(Self { config: header.model, meta: header.meta, blobs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(bad("truncated checkpoint"));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r, 4)?.try_into().expect("4 bytes")))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(r, 8)?.try_into().expect("8 bytes")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::WaveletMode;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            context_len: 8,
            embed_dim: 8,
            ff_dim: 16,
            n_heads: 2,
            vocab_size: 5,
            penultimate_dim: 12,
            ..ModelConfig::desk()
        }
        .with_mode(WaveletMode::Learnable)
    }

    #[test]
    fn roundtrip_restores_values() {
        let model = GptModel::new(tiny(), 3).unwrap();
        let mut ck = Checkpoint::from_model(&model);
        ck.meta = serde_json::json!({"step": 12});
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let restored = back.restore_model(&tiny()).unwrap();
        assert_eq!(restored.params(), model.params());
    }

    #[test]
    fn config_mismatch_rejected() {
        let model = GptModel::new(tiny(), 3).unwrap();
        let ck = Checkpoint::from_model(&model);
        let other = tiny().with_mode(WaveletMode::Fixed);
        assert!(matches!(ck.restore_model(&other), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn corrupt_bytes_rejected() {
        let model = GptModel::new(tiny(), 3).unwrap();
        let bytes = Checkpoint::from_model(&model).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
