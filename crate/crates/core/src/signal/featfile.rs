//! Binary feature dumps: `FEAT` magic, u32 version, u32 frames, u32 dims,
//! f64 hop seconds, then row-major f32 values. Everything little-endian.

use std::fs;
use std::path::Path;

use super::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FEAT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8;

pub fn write_features(path: impl AsRef<Path>, feat: &FeatureMatrix) -> Result<()> {
    fs::write(path, encode(feat))?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    decode(&fs::read(path)?)
}

pub(crate) fn encode(feat: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + feat.values().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(feat.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(feat.dims() as u32).to_le_bytes());
    out.extend_from_slice(&feat.frame_hop().to_le_bytes());
    for &v in feat.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub(crate) fn decode(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing FEAT header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported feature file version {version}")));
    }
    let frames = u32_at(8) as usize;
    let dims = u32_at(12) as usize;
    let hop = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    if body.len() != frames * dims * 4 {
        return Err(Error::Format(format!("expected {} value bytes, found {}", frames * dims * 4, body.len())));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    FeatureMatrix::new(values, frames, dims, hop, FeatureKind::Generic)
}
