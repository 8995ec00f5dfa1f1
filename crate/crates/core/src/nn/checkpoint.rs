//! Binary checkpoint: magic `CKPT`, format version, model kind, config
//! digest, step count, the config itself, then one record per tensor
//! (name, rank, dims, f32 little-endian values).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::params::ParameterSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CKPT";
const VERSION: u32 = 1;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Serializes `p`; values are stored as f32.
pub fn to_bytes(p: &ParameterSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, p.kind());
    put_str(&mut out, &p.config_digest());
    out.extend_from_slice(&p.step().to_le_bytes());
    put_str(&mut out, p.config_json());
    let entries: Vec<_> = p.iter().collect();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        put_str(&mut out, name);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ParameterSet> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let kind = r.string()?;
    let digest = r.string()?;
    let step = r.u64()?;
    let config_json = r.string()?;
    let count = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != buf.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let p = ParameterSet::from_parts(kind, config_json, step, tensors);
    if p.config_digest() != digest {
        return Err(Error::Format("config digest mismatch".into()));
    }
    Ok(p)
}

pub fn save(path: impl AsRef<Path>, p: &ParameterSet) -> Result<()> {
    Ok(fs::write(path, to_bytes(p))?)
}

pub fn load(path: impl AsRef<Path>) -> Result<ParameterSet> {
    from_bytes(&fs::read(path)?)
}

/// Rounds every value to f32, the precision a saved checkpoint keeps.
pub fn quantize(p: &ParameterSet) -> ParameterSet {
    let tensors = p.iter().map(|(k, t)| (k.to_string(), t.map(|v| v as f32 as f64))).collect();
    ParameterSet::from_parts(p.kind().to_string(), p.config_json().to_string(), p.step(), tensors)
}
