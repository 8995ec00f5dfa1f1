//! Deterministic DSP primitives shared by every other module.

mod cqcc;
mod deltas;
mod featfile;
mod mel;
mod mulaw;
mod resample;
mod snr;
mod wav;

pub use cqcc::{cepstrum_from_log_spectrum, extract_cqcc, CqccConfig};
pub use deltas::append_deltas;
pub use featfile::{read_features, write_features};
pub(crate) use mel::hann;
pub use mel::{hz_to_mel, mel_center_frequencies, mel_filterbank, mel_spectrogram, mel_to_hz, MelConfig};
pub use mulaw::{MuLaw, MuLawEncoded};
pub use resample::resample;
pub use snr::{estimate_snr, frame_power_db, percentile};
pub use wav::{read_wav, write_wav};

use crate::error::{invalid, Result};

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return invalid("sample rate must be positive");
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return invalid(format!("sample {i} is not finite"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate: sample_rate.max(1) }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Same rate, new samples. Non-finite values are rejected.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self { samples: self.samples.iter().map(|s| s * gain).collect(), sample_rate: self.sample_rate }
    }
}

/// What a [`FeatureMatrix`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Mel,
    MelDelta,
    Cqcc,
    Linguistic,
    /// Loaded from disk without a kind tag.
    Generic,
}

/// Frames x dims real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    frames: usize,
    dims: usize,
    frame_hop: f64,
    kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(values: Vec<f64>, frames: usize, dims: usize, frame_hop: f64, kind: FeatureKind) -> Result<Self> {
        if values.len() != frames * dims {
            return invalid(format!("{} values for {frames}x{dims} matrix", values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("feature matrix contains non-finite values");
        }
        Ok(Self { values, frames, dims, frame_hop, kind })
    }

    pub fn from_rows(rows: &[Vec<f64>], frame_hop: f64, kind: FeatureKind) -> Result<Self> {
        let dims = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dims) {
            return invalid("ragged feature rows");
        }
        Self::new(rows.concat(), rows.len(), dims, frame_hop, kind)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn frame_hop(&self) -> f64 {
        self.frame_hop
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: FeatureKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.dims..(frame + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.dims.max(1)).take(self.frames)
    }

    pub fn get(&self, frame: usize, dim: usize) -> f64 {
        self.values[frame * self.dims + dim]
    }

    /// Keep the first `dims` columns of every frame.
    pub fn leading_dims(&self, dims: usize) -> Result<Self> {
        if dims > self.dims {
            return invalid(format!("cannot take {dims} of {} dims", self.dims));
        }
        let values = self.rows().flat_map(|r| r[..dims].iter().copied()).collect();
        Self::new(values, self.frames, dims, self.frame_hop, self.kind)
    }

    /// Per-dimension mean over frames.
    pub fn mean_row(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dims];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.frames.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}
