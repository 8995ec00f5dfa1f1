//! Line-delimited record files shared by the stages and the direct
//! commands.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use spoofbench_core::signal::{FeatureKind, FeatureMatrix};
use spoofbench_core::{Error, Result};

/// A noisy input and the clean signal it was made from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub noisy_path: PathBuf,
    pub clean_path: PathBuf,
}

/// A feature dump and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub id: String,
    pub feat_path: PathBuf,
    #[serde(default)]
    pub audio_path: Option<PathBuf>,
    #[serde(default)]
    pub alignment_path: Option<PathBuf>,
    #[serde(default)]
    pub transcript: String,
    /// Condition name as understood by the synthesizers.
    pub condition: String,
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for it in items {
        serde_json::to_writer(&mut f, it)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let f = BufReader::new(fs::File::open(path).map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

/// Alignment file kept next to an audio file.
pub fn alignment_path(audio: &Path) -> PathBuf {
    audio.with_extension("align")
}

/// Concatenates frames of matrices with equal width.
pub fn stack_frames(mats: &[FeatureMatrix], kind: FeatureKind) -> Result<FeatureMatrix> {
    let first = mats.first().ok_or_else(|| Error::InvalidArgument("no feature matrices to stack".into()))?;
    let dims = first.dims();
    let mut values = Vec::new();
    let mut frames = 0;
    for m in mats {
        if m.dims() != dims {
            return Err(Error::InvalidArgument(format!("cannot stack {} dims onto {dims}", m.dims())));
        }
        values.extend_from_slice(m.values());
        frames += m.frames();
    }
    FeatureMatrix::new(values, frames, dims, first.frame_hop(), kind)
}
