//! Binary model files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic           8 bytes  "SINNETMD"
//! version         u32      1
//! width_divisor   u32
//! tensor_count    u32
//! per tensor:
//!   name_len      u32
//!   name          name_len bytes of UTF-8
//!   dims          4 x u32  (out_ch, in_ch, kh, kw) for weights, (1, out_ch, 1, 1) for biases
//!   data          product(dims) x f32 little-endian
//! ```
//!
//! Nothing may follow the last tensor.

use std::path::Path;

use super::sinnet::SinNet;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor::Shape;

pub const MAGIC: &[u8; 8] = b"SINNETMD";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_bytes(model: &SinNet<f32>) -> Vec<u8> {
    let params = model.params();
    let mut out = Vec::with_capacity(16 + 4 * params.scalar_count() + 64 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.width_divisor() as u32).to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        for d in p.value.shape().dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::ModelFormat(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<SinNet<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::ModelFormat("bad magic; not a model file".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let divisor = r.u32("width divisor")? as usize;
    let mut model = SinNet::<f32>::new(divisor)?;
    let count = r.u32("tensor count")? as usize;
    if count != model.params().len() {
        return Err(Error::ModelFormat(format!(
            "{count} tensors in file, architecture has {}",
            model.params().len()
        )));
    }
    for p in model.params_mut().iter_mut() {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::ModelFormat("tensor name is not UTF-8".into()))?;
        if name != p.name {
            return Err(Error::ModelFormat(format!("expected tensor `{}`, found `{name}`", p.name)));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32("tensor dims")? as usize;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        if shape != p.value.shape() {
            return Err(Error::ModelFormat(format!(
                "tensor `{name}` has shape {shape}, expected {}",
                p.value.shape()
            )));
        }
        let raw = r.take(4 * shape.len(), "tensor data")?;
        for (v, chunk) in p.value.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn save_model(model: &SinNet<f32>, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SinNet<f32>> {
    from_bytes(&std::fs::read(path)?)
}
