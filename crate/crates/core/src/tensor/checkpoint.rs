//! `PETN` checkpoint codec.
//!
//! Layout (all integers little-endian): magic `PETN`, version `u32 = 1`,
//! entry count `u32`, then per entry a `u16` name length, the UTF-8 name,
//! `u32` rank, `rank` × `u64` dims and the payload as `f64` values.

use std::fs;
use std::path::Path;

use super::{Tensor, TensorError};

const MAGIC: &[u8; 4] = b"PETN";
const VERSION: u32 = 1;

pub fn encode_checkpoint(entries: &[(String, Tensor)]) -> Result<Vec<u8>, TensorError> {
    let count = u32::try_from(entries.len()).map_err(|_| TensorError::Checkpoint("too many entries".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in entries {
        let len = u16::try_from(name.len()).map_err(|_| TensorError::Checkpoint(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TensorError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TensorError::Checkpoint(format!("truncated while reading {what}")))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16, TensorError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, TensorError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, TensorError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(TensorError::Checkpoint("bad magic, expected PETN".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32("entry count")?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| TensorError::Checkpoint("entry name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = usize::try_from(r.u64("dims")?).map_err(|_| TensorError::Checkpoint("dimension overflow".into()))?;
            shape.push(d);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| TensorError::Checkpoint(format!("{name}: dimension overflow")))?;
        let payload = r.take(n.saturating_mul(8), "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(TensorError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}

pub fn write_checkpoint(path: impl AsRef<Path>, entries: &[(String, Tensor)]) -> Result<(), TensorError> {
    fs::write(path, encode_checkpoint(entries)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>, TensorError> {
    decode_checkpoint(&fs::read(path)?)
}
