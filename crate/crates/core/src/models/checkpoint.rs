//! Binary checkpoints.
//!
//! Layout (little-endian): magic `HYSTCKPT`, `u32` version, `u64` length and
//! bytes of a JSON metadata blob, `u32` tensor count, then per tensor: `u32`
//! name length, UTF-8 name, `u8` dtype tag, `u32` rank, `rank` x `u64`
//! extents and the raw element bytes.

use std::path::Path;

use super::{ModelError, ParamSet};
use crate::diffkernel::{DType, Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HYSTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const AUX_PREFIX: &str = "aux:";

/// Model parameters, free-form metadata (model config, scales, training
/// state) and auxiliary tensors such as optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Real> {
    pub meta: serde_json::Value,
    pub params: ParamSet<T>,
    pub aux: ParamSet<T>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.bytes.len() - self.pos < n {
            return Err(bad(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn bad(path: &Path, detail: impl ToString) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        detail: detail.to_string(),
    }
}

fn put_tensor<T: Real>(buf: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(T::DTYPE.tag());
    buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(buf);
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn new(meta: serde_json::Value, params: ParamSet<T>) -> Self {
        Self {
            meta,
            params,
            aux: ParamSet::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        buf.extend_from_slice(&meta);
        buf.extend_from_slice(&((self.params.len() + self.aux.len()) as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            put_tensor(&mut buf, name, t);
        }
        for (name, t) in self.aux.iter() {
            put_tensor(&mut buf, &format!("{AUX_PREFIX}{name}"), t);
        }
        buf
    }

    /// Parses a checkpoint, converting stored values to `T` if needed.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, ModelError> {
        let mut c = Cursor { bytes, pos: 0, path };
        if c.take(8)? != CHECKPOINT_MAGIC {
            return Err(bad(path, "not a checkpoint (bad magic)"));
        }
        let version = c.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(path, format!("unsupported checkpoint version {version}")));
        }
        let meta_len = c.u64()? as usize;
        let meta = serde_json::from_slice(c.take(meta_len)?).map_err(|e| bad(path, e))?;
        let count = c.u32()?;
        let mut params = ParamSet::new();
        let mut aux = ParamSet::new();
        for _ in 0..count {
            let name_len = c.u32()? as usize;
            let name = std::str::from_utf8(c.take(name_len)?)
                .map_err(|e| bad(path, e))?
                .to_string();
            let tag = c.u8()?;
            let dtype = DType::from_tag(tag).ok_or_else(|| bad(path, format!("{name}: unknown dtype tag {tag}")))?;
            let rank = c.u32()? as usize;
            if rank > 8 {
                return Err(bad(path, format!("{name}: implausible rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| c.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let raw = c.take(n * dtype.size())?;
            let data: Vec<T> = match dtype {
                DType::F32 => raw.chunks_exact(4).map(|b| T::of(f32::read_le(b) as f64)).collect(),
                DType::F64 => raw.chunks_exact(8).map(|b| T::of(f64::read_le(b))).collect(),
            };
            let t = Tensor::new(shape, data).map_err(|e| bad(path, e))?;
            match name.strip_prefix(AUX_PREFIX) {
                Some(rest) => aux.insert(rest, t),
                None => params.insert(name, t),
            }
        }
        if c.pos != bytes.len() {
            return Err(bad(path, format!("{} trailing bytes", bytes.len() - c.pos)));
        }
        Ok(Self { meta, params, aux })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }
}
