//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"WDSRCKPT"  u32 version
//! u32 len, network spec as `key=value` lines
//! u64 training step
//! u32 tensor count, then per tensor:
//!   u32 len, name; u32 ndim; u64 extent * ndim; f32 value * product(extents)
//! ```
//!
//! Tensors are the trainable parameters in store order (weight-norm `v` and
//! `g` separately) followed by any batch-norm running statistics.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Model, NetSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"WDSRCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: NetSpec,
    pub step: u64,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, step: u64) -> Self {
        let mut tensors: Vec<(String, Tensor<f32>)> = model
            .params
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.clone()))
            .collect();
        tensors.extend(model.buffers().into_iter().map(|(n, t)| (n, t.clone())));
        Self {
            spec: model.spec.clone(),
            step,
            tensors,
        }
    }

    pub fn to_model(&self) -> Result<Model<f32>> {
        let mut model = Model::from_seed(self.spec.clone(), 0)?;
        let mut seen = vec![false; model.params.len()];
        for (name, t) in &self.tensors {
            if let Some(id) = model.params.find(name) {
                if std::mem::replace(&mut seen[id.index()], true) {
                    return Err(Error::CorruptCheckpoint(format!(
                        "tensor `{name}` appears twice"
                    )));
                }
                model.params.set(id, t.clone()).map_err(|_| {
                    Error::CorruptCheckpoint(format!("tensor `{name}` has shape {:?}", t.shape()))
                })?;
            } else {
                model.set_buffer(name, t.clone())?;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            let name = &model
                .params
                .iter()
                .nth(i)
                .map(|(_, p)| p.name.clone())
                .unwrap_or_default();
            return Err(Error::CorruptCheckpoint(format!(
                "missing parameter `{name}`"
            )));
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.spec.to_text());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::CorruptCheckpoint(
                "not a checkpoint (bad magic)".into(),
            ));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let spec_text = r.string("network spec")?;
        let spec = NetSpec::from_text(&spec_text)
            .map_err(|e| Error::CorruptCheckpoint(format!("network spec: {e}")))?;
        let step = r.u64("step")?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.string("tensor name")?;
            let ndim = r.u32("rank")? as usize;
            if ndim > 8 {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor `{name}` has rank {ndim}"
                )));
            }
            let shape = (0..ndim)
                .map(|_| r.u64("extent").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| {
                    Error::CorruptCheckpoint(format!("tensor `{name}` data truncated"))
                })?;
            let raw = r.take(len * 4, "tensor data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.remaining() != 0 {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing bytes",
                r.remaining()
            )));
        }
        Ok(Self {
            spec,
            step,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(model: &Model<f32>, step: u64, path: &Path) -> Result<()> {
    Checkpoint::from_model(model, step).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, u64)> {
    let ckpt = Checkpoint::load(path)?;
    Ok((ckpt.to_model()?, ckpt.step))
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated while reading {what}"
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("eight bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| Error::CorruptCheckpoint(format!("{what} is not UTF-8")))
    }
}
