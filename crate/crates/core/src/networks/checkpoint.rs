//! Binary checkpoint container (all integers little-endian):
//!
//! ```text
//! "WSDCKPT1"                      8-byte magic
//! u32 version
//! u32 n, n bytes                  NetworkConfig as JSON
//! u32 n, n bytes                  free-form metadata JSON
//! u32 count
//! count x {
//!   u16 n, n bytes                name (UTF-8)
//!   u8 flags                      bit 0 trainable, bit 1 buffer
//!   u8 ndim, ndim x u32           shape
//!   prod(shape) x f32             row-major data
//! }
//! 32 bytes                        SHA-256 of everything above
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::NetworkConfig;
use super::params::ParamStore;
use super::Model;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WSDCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const FLAG_TRAINABLE: u8 = 1;
pub const FLAG_BUFFER: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub flags: u8,
    pub tensor: Tensor<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    /// Model parameters first, in store order.
    pub fn from_model(model: &Model, meta: serde_json::Value) -> Self {
        let tensors = model
            .params
            .entries()
            .iter()
            .map(|e| NamedTensor {
                name: e.name.clone(),
                flags: if e.trainable { FLAG_TRAINABLE } else { FLAG_BUFFER },
                tensor: e.tensor.clone(),
            })
            .collect();
        Checkpoint {
            config: model.config.clone(),
            meta,
            tensors,
        }
    }

    /// Rebuilds the model from the tensors flagged trainable or buffer.
    pub fn model(&self) -> Result<Model> {
        self.config.validate()?;
        let reference = super::init_params(&self.config, 0);
        let mut params = ParamStore::new();
        for t in self.tensors.iter().filter(|t| t.flags & (FLAG_TRAINABLE | FLAG_BUFFER) != 0) {
            params.push(t.name.clone(), t.tensor.clone(), t.flags & FLAG_TRAINABLE != 0);
        }
        if params.len() != reference.len()
            || params
                .entries()
                .iter()
                .zip(reference.entries())
                .any(|(a, b)| a.name != b.name || a.tensor.shape() != b.tensor.shape() || a.trainable != b.trainable)
        {
            return Err(Error::Config("checkpoint parameters do not match its network config".into()));
        }
        Ok(Model {
            config: self.config.clone(),
            params,
        })
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.tensor)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for json in [
            serde_json::to_vec(&self.config).expect("config serializes"),
            serde_json::to_vec(&self.meta).expect("meta serializes"),
        ] {
            out.extend_from_slice(&(json.len() as u32).to_le_bytes());
            out.extend_from_slice(&json);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.flags);
            out.push(t.tensor.ndim() as u8);
            for &d in t.tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, msg.to_string());
        if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + 32 {
            return Err(bad("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8).ok_or_else(|| bad("truncated"))? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut json = || -> Result<&[u8]> {
            let n = r.u32().ok_or_else(|| bad("truncated"))? as usize;
            r.take(n).ok_or_else(|| bad("truncated"))
        };
        let config: NetworkConfig =
            serde_json::from_slice(json()?).map_err(|e| bad(&format!("bad config: {e}")))?;
        let meta: serde_json::Value = serde_json::from_slice(json()?).map_err(|e| bad(&format!("bad meta: {e}")))?;
        let count = r.u32().ok_or_else(|| bad("truncated"))?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let t = r.tensor().ok_or_else(|| bad("truncated or malformed tensor"))?;
            tensors.push(t);
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint { config, meta, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn tensor(&mut self) -> Option<NamedTensor> {
        let n = u16::from_le_bytes(self.take(2)?.try_into().ok()?) as usize;
        let name = String::from_utf8(self.take(n)?.to_vec()).ok()?;
        let flags = self.take(1)?[0];
        let ndim = self.take(1)?[0] as usize;
        let shape: Vec<usize> = (0..ndim).map(|_| self.u32().map(|d| d as usize)).collect::<Option<_>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d))?;
        let raw = self.take(len.checked_mul(4)?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Some(NamedTensor {
            name,
            flags,
            tensor: Tensor::new(shape, data),
        })
    }
}
