//! Parameter checkpoint container.
//!
//! All integers are little-endian:
//!
//! ```text
//! magic    8 bytes   "A2CKPT\0\0"
//! version  u32       CHECKPOINT_VERSION (1)
//! dtype    u8        0 = f32, 1 = f64
//! meta     u32 len + UTF-8 bytes (free-form, the CLI stores its JSON run config)
//! count    u32       number of entries
//! entry    kind u8 (0 = parameter, 1 = buffer)
//!          u32 name len + UTF-8 name
//!          u32 rank, then rank × u64 dims
//!          product(dims) values of the stored dtype
//! ```
//!
//! Parameters come first, then buffers, each in ascending name order, so a
//! given parameter set always serializes to the same bytes.

use std::io::{Read, Write};
use std::path::Path;

use super::{ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"A2CKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint<T: Scalar>(params: &ParamSet<T>, meta: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    out.push(T::DTYPE);
    put_str(&mut out, meta);
    let entries: Vec<(u8, &String, &Tensor<T>)> = params
        .params()
        .map(|(k, v)| (0u8, k, v))
        .chain(params.buffers().map(|(k, v)| (1u8, k, v)))
        .collect();
    put_u32(&mut out, entries.len() as u32);
    for (kind, name, t) in entries {
        out.push(kind);
        put_str(&mut out, name);
        put_u32(&mut out, t.rank() as u32);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            match T::DTYPE {
                0 => out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes()),
                _ => out.extend_from_slice(&v.to_f64_lossy().to_le_bytes()),
            }
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }
}

/// Decodes a checkpoint, converting stored values to `T`.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(ParamSet<T>, String)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dtype = c.u8()?;
    let width = match dtype {
        0 => 4,
        1 => 8,
        other => return Err(Error::Checkpoint(format!("unknown dtype tag {other}"))),
    };
    let meta = c.string()?;
    let count = c.u32()?;
    let mut set = ParamSet::new();
    for _ in 0..count {
        let kind = c.u8()?;
        let name = c.string()?;
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = c.take(numel.checked_mul(width).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data: Vec<T> = raw
            .chunks_exact(width)
            .map(|b| {
                if width == 4 {
                    T::lit(f32::from_le_bytes(b.try_into().unwrap()) as f64)
                } else {
                    T::lit(f64::from_le_bytes(b.try_into().unwrap()))
                }
            })
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        match kind {
            0 => set.insert(name, t),
            1 => set.insert_buffer(name, t),
            other => return Err(Error::Checkpoint(format!("unknown entry kind {other}"))),
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((set, meta))
}

pub fn write_checkpoint<T: Scalar>(path: &Path, params: &ParamSet<T>, meta: &str) -> Result<()> {
    let bytes = encode_checkpoint(params, meta);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<(ParamSet<T>, String)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
