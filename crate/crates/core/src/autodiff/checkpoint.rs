//! Named-tensor checkpoint file.
//!
//! Layout (all integers little-endian `u32`): magic `F3DN`, format version,
//! tensor count, then per tensor the name length, UTF-8 name bytes, rank,
//! dims, and the payload as little-endian `f32`.

use std::io::{Read, Write};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"F3DN";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut out: W, tensors: &[(String, Tensor)]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated checkpoint while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<checkpoint>", e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected F3DN".into(),
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let count = c.u32("tensor count")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = c.u32("name length")? as usize;
        let at = c.pos as u64;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| Error::Format {
                offset: at,
                message: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = c.take(n * 4, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if c.pos != bytes.len() {
        return Err(Error::Format {
            offset: c.pos as u64,
            message: "trailing bytes after last tensor".into(),
        });
    }
    Ok(out)
}
