//! Single-file checkpoint: canonical JSON config plus named tensors at the
//! training precision, sealed with a SHA-256 checksum.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"CTXBCKPT"  u32 version  u32 float bits (32 or 64)
//! u32 config_len, config JSON (keys sorted, no whitespace)
//! u32 tensor_count
//! per tensor: u32 name_len, name, u32 rank, u64 dims[rank], float data[product]
//! 32-byte SHA-256 of everything above
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::encoder::ContextualBert;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"CTXBCKPT";
const VERSION: u32 = 1;

/// JSON with lexicographically ordered keys and no insignificant whitespace.
pub fn canonical_json<S: serde::Serialize>(value: &S) -> Result<String> {
    // serde_json::Value keeps object keys in a BTreeMap.
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

pub fn encode<T: Scalar>(model: &ContextualBert<T>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&T::BITS.to_le_bytes());
    let config = canonical_json(model.config())?;
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(config.as_bytes());
    buf.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (_, p) in model.params().iter() {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            if T::BITS == 64 {
                buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            } else {
                buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(digest.as_slice());
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(bad("truncated"));
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
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        reason: reason.into(),
    }
}

/// Decodes a checkpoint at its stored precision converted to `f32`.
pub fn decode(bytes: &[u8]) -> Result<ContextualBert<f32>> {
    decode_as(bytes)
}

/// Stored precision of an encoded checkpoint.
pub fn stored_bits(bytes: &[u8]) -> Result<u32> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    r.u32()?;
    r.u32()
}

pub fn decode_as<T: Scalar>(bytes: &[u8]) -> Result<ContextualBert<T>> {
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(bad("too short"));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(bad("checksum mismatch"));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let bits = r.u32()?;
    if bits != 32 && bits != 64 {
        return Err(bad(format!("unsupported float width {bits}")));
    }
    let width = bits as usize / 8;
    let config_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)?;
    let mut model = ContextualBert::<T>::zeroed(config)?;
    let count = r.u32()? as usize;
    if count != model.params().len() {
        return Err(bad(format!(
            "{count} tensors stored, model expects {}",
            model.params().len()
        )));
    }
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| bad("tensor name is not utf-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n * width)?
            .chunks_exact(width)
            .map(|c| {
                T::lit(if width == 8 {
                    f64::from_le_bytes(c.try_into().unwrap())
                } else {
                    f32::from_le_bytes(c.try_into().unwrap()) as f64
                })
            })
            .collect();
        let id = model
            .params()
            .id(&name)
            .ok_or_else(|| bad(format!("unexpected tensor {name}")))?;
        let value = Tensor::new(shape, data)?;
        if value.shape() != model.params().value(id).shape() {
            return Err(Error::shape(
                "checkpoint tensor",
                value.shape(),
                model.params().value(id).shape(),
            ));
        }
        *model.params_mut().value_mut(id) = value;
    }
    if r.pos != body.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(model)
}

pub fn save<T: Scalar>(model: &ContextualBert<T>, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ContextualBert<f32>> {
    load_as(path)
}

pub fn load_as<T: Scalar>(path: &Path) -> Result<ContextualBert<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_as(&bytes)
}

/// Hex SHA-256 of a checkpoint's bytes.
pub fn fingerprint<T: Scalar>(model: &ContextualBert<T>) -> Result<String> {
    Ok(hex::encode(Sha256::digest(encode(model)?).as_slice()))
}
