use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSpec {
    pub window: usize,
    pub hop_train: usize,
    pub hop_infer: usize,
}

impl Default for ChunkSpec {
    fn default() -> Self {
        Self::with_window(1 << 14)
    }
}

impl ChunkSpec {
    /// Half-window training hop, non-overlapping inference.
    pub fn with_window(window: usize) -> Self {
        Self { window, hop_train: window / 2, hop_infer: window }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.window.is_power_of_two() {
            return invalid(format!("chunk window {} is not a power of two", self.window));
        }
        for hop in [self.hop_train, self.hop_infer] {
            if hop == 0 || hop > self.window {
                return invalid(format!("hop {hop} outside (0, {}]", self.window));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChunkMode {
    Train,
    Infer,
}

/// Where one chunk sits in the stream and which of its samples are new.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkPlacement {
    /// Stream index of the chunk's first sample; negative when zero-padded.
    pub start: isize,
    pub fresh_start: usize,
    pub fresh_end: usize,
}

impl ChunkPlacement {
    pub fn zero_padded(&self) -> bool {
        self.start < 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMap {
    pub window: usize,
    pub total_len: usize,
    pub placements: Vec<ChunkPlacement>,
}

/// Cuts `x` into `window`-sample chunks.
///
/// Training mode takes every full window at `hop_train`. Inference mode
/// tiles the stream at `hop_infer`; a trailing remainder becomes one more
/// chunk ending at the last sample, pre-padded with the samples before it.
/// Inputs shorter than a window are left-padded with zeros.
pub fn chunk_stream(x: &[f64], spec: &ChunkSpec, mode: ChunkMode) -> Result<(Vec<Vec<f64>>, CoverageMap)> {
    spec.validate()?;
    let (w, len) = (spec.window, x.len());
    let mut placements = Vec::new();
    if len < w {
        placements.push(ChunkPlacement { start: len as isize - w as isize, fresh_start: 0, fresh_end: len });
    } else {
        let hop = match mode {
            ChunkMode::Train => spec.hop_train,
            ChunkMode::Infer => spec.hop_infer,
        };
        let mut off = 0;
        let mut covered = 0;
        while off + w <= len {
            placements.push(ChunkPlacement { start: off as isize, fresh_start: covered, fresh_end: off + w });
            covered = off + w;
            off += hop;
        }
        if mode == ChunkMode::Infer && covered < len {
            placements.push(ChunkPlacement { start: (len - w) as isize, fresh_start: covered, fresh_end: len });
        }
    }
    let chunks = placements
        .iter()
        .map(|p| {
            (0..w as isize)
                .map(|i| {
                    let j = p.start + i;
                    if j < 0 {
                        0.0
                    } else {
                        x[j as usize]
                    }
                })
                .collect()
        })
        .collect();
    Ok((chunks, CoverageMap { window: w, total_len: len, placements }))
}

/// Emits every chunk's fresh span in order.
pub fn concat_stream(chunks: &[Vec<f64>], map: &CoverageMap) -> Result<Vec<f64>> {
    if chunks.len() != map.placements.len() {
        return invalid(format!("{} chunks for {} placements", chunks.len(), map.placements.len()));
    }
    let mut out = Vec::with_capacity(map.total_len);
    for (c, p) in chunks.iter().zip(&map.placements) {
        let lo = p.fresh_start as isize - p.start;
        let hi = p.fresh_end as isize - p.start;
        if c.len() != map.window || p.fresh_start != out.len() || lo < 0 || hi < lo || hi as usize > c.len() {
            return invalid(format!("coverage entry {p:?} inconsistent with a {}-sample chunk", c.len()));
        }
        out.extend_from_slice(&c[lo as usize..hi as usize]);
    }
    if out.len() != map.total_len {
        return invalid(format!("coverage spans {} of {} samples", out.len(), map.total_len));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn train_offsets() {
        let (chunks, map) = chunk_stream(&ramp(32768), &ChunkSpec::default(), ChunkMode::Train).unwrap();
        assert_eq!(chunks.len(), 3);
        let starts: Vec<isize> = map.placements.iter().map(|p| p.start).collect();
        assert_eq!(starts, vec![0, 8192, 16384]);
    }

    #[test]
    fn single_window_is_identity() {
        let x = ramp(16384);
        let (chunks, map) = chunk_stream(&x, &ChunkSpec::default(), ChunkMode::Infer).unwrap();
        assert_eq!(chunks, vec![x.clone()]);
        assert_eq!(concat_stream(&chunks, &map).unwrap(), x);
    }

    #[test]
    fn last_chunk_pre_padded() {
        let x = ramp(20000);
        let (chunks, map) = chunk_stream(&x, &ChunkSpec::default(), ChunkMode::Infer).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[1], x[3616..20000].to_vec());
        assert_eq!((map.placements[1].fresh_start, map.placements[1].fresh_end), (16384, 20000));
        assert_eq!(concat_stream(&chunks, &map).unwrap(), x);
    }

    #[test]
    fn short_input_zero_padded_and_flagged() {
        let x = ramp(10);
        let spec = ChunkSpec::with_window(16);
        let (chunks, map) = chunk_stream(&x, &spec, ChunkMode::Infer).unwrap();
        assert!(map.placements[0].zero_padded());
        assert_eq!(&chunks[0][..6], &[0.0; 6]);
        assert_eq!(concat_stream(&chunks, &map).unwrap(), x);
    }

    #[test]
    fn inconsistent_map_rejected() {
        let x = ramp(100);
        let spec = ChunkSpec::with_window(32);
        let (chunks, mut map) = chunk_stream(&x, &spec, ChunkMode::Infer).unwrap();
        assert!(concat_stream(&chunks[..1], &map).is_err());
        map.placements[1].fresh_start += 1;
        assert!(concat_stream(&chunks, &map).is_err());
    }

    proptest! {
        #[test]
        fn infer_round_trip(len in 1usize..100_000) {
            let x: Vec<f64> = (0..len).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
            let (chunks, map) = chunk_stream(&x, &ChunkSpec::with_window(1024), ChunkMode::Infer).unwrap();
            prop_assert_eq!(concat_stream(&chunks, &map).unwrap(), x);
        }
    }
}
