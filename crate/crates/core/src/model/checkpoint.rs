//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic "CPVTCKPT" | u32 version | u32 len + config text (key-sorted key=value)
//! | u32 tensor count | per tensor: u32 len + name, u32 rank, u64 dims.., u8 precision
//! | raw payloads in header order | u64 FNV-1a of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::{build_model, Model, ModelConfig};
use crate::digest::fnv1a64;
use crate::error::{Error, Result};
use crate::tensor::{Float, Precision, Tensor};

pub const MAGIC: &[u8; 8] = b"CPVTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A model whose numeric precision is known only at run time.
#[derive(Clone, Debug)]
pub enum DynModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

impl DynModel {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(match cfg.precision {
            Precision::F32 => DynModel::F32(build_model(cfg, seed)?),
            Precision::F64 => DynModel::F64(build_model(cfg, seed)?),
        })
    }

    pub fn precision(&self) -> Precision {
        match self {
            DynModel::F32(_) => Precision::F32,
            DynModel::F64(_) => Precision::F64,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            DynModel::F32(m) => &m.cfg,
            DynModel::F64(m) => &m.cfg,
        }
    }

    pub fn checksum(&self) -> u64 {
        match self {
            DynModel::F32(m) => m.checksum(),
            DynModel::F64(m) => m.checksum(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            DynModel::F32(m) => save_checkpoint(m, path),
            DynModel::F64(m) => save_checkpoint(m, path),
        }
    }

    pub fn into_f32(self) -> Option<Model<f32>> {
        match self {
            DynModel::F32(m) => Some(m),
            DynModel::F64(_) => None,
        }
    }

    pub fn into_f64(self) -> Option<Model<f64>> {
        match self {
            DynModel::F64(m) => Some(m),
            DynModel::F32(_) => None,
        }
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

/// Serializes `model` to bytes.
pub fn encode<T: Float>(model: &Model<T>) -> Vec<u8> {
    let mut cfg = model.cfg.clone();
    cfg.precision = T::PRECISION;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    put_str(&mut buf, &cfg.to_kv_text());
    put_u32(&mut buf, model.store.len() as u32);
    for (_, p) in model.store.iter() {
        put_str(&mut buf, &p.name);
        put_u32(&mut buf, p.value.rank() as u32);
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.push(T::PRECISION.code());
    }
    for (_, p) in model.store.iter() {
        for &x in p.value.data() {
            x.write_le(&mut buf);
        }
    }
    let digest = fnv1a64(&buf);
    buf.extend_from_slice(&digest.to_le_bytes());
    buf
}

pub fn save_checkpoint<T: Float>(model: &Model<T>, path: &Path) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
    path: &'b Path,
}

impl<'b> Reader<'b> {
    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::Corruption {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.corrupt("unexpected end of data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.corrupt("string is not UTF-8"))
    }
}

struct Header {
    name: String,
    shape: Vec<usize>,
    precision: Precision,
}

/// Decodes a checkpoint. The digest is checked before anything else, then
/// the format version.
pub fn decode(bytes: &[u8], path: &Path) -> Result<DynModel> {
    let corrupt = |reason: &str| Error::Corruption {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(corrupt("file too short"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if fnv1a64(body) != stored {
        return Err(corrupt("digest mismatch"));
    }
    let mut r = Reader { buf: body, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let cfg = ModelConfig::from_kv_text(&r.string()?)?;
    let count = r.u32()? as usize;
    let mut headers = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let code = r.take(1)?[0];
        let precision = Precision::from_code(code).ok_or_else(|| corrupt("unknown precision code"))?;
        headers.push(Header { name, shape, precision });
    }
    let model = match cfg.precision {
        Precision::F32 => DynModel::F32(fill::<f32>(&cfg, &headers, &mut r)?),
        Precision::F64 => DynModel::F64(fill::<f64>(&cfg, &headers, &mut r)?),
    };
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes after payload"));
    }
    Ok(model)
}

fn fill<T: Float>(cfg: &ModelConfig, headers: &[Header], r: &mut Reader<'_>) -> Result<Model<T>> {
    let mut model = build_model::<T>(cfg, 0)?;
    if headers.len() != model.store.len() {
        return Err(r.corrupt(format!(
            "{} tensors stored, architecture has {}",
            headers.len(),
            model.store.len()
        )));
    }
    for h in headers {
        let id = model
            .store
            .find(&h.name)
            .ok_or_else(|| r.corrupt(format!("unknown tensor `{}`", h.name)))?;
        if h.precision != T::PRECISION {
            return Err(r.corrupt(format!("tensor `{}` precision differs from the config", h.name)));
        }
        if model.store.value(id).shape() != h.shape.as_slice() {
            return Err(r.corrupt(format!("tensor `{}` has shape {:?}", h.name, h.shape)));
        }
        let n: usize = h.shape.iter().product();
        let raw = r.take(n * T::PRECISION.bytes())?;
        let data: Vec<T> = raw.chunks_exact(T::PRECISION.bytes()).map(T::read_le).collect();
        model.store.get_mut(id).value = Tensor::new(h.shape.clone(), data)?;
    }
    Ok(model)
}

/// Loads a checkpoint in whatever precision it was saved with.
pub fn load_checkpoint(path: &Path) -> Result<DynModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
