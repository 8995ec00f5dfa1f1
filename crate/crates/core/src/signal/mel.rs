use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureMatrix, Waveform};
use crate::error::{invalid, Result};

/// Log mel filterbank settings. `log_floor` is expressed in the log domain:
/// every output cell is `max(ln(energy), log_floor)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub bands: usize,
    pub fft_size: usize,
    pub window: usize,
    pub hop: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self::for_rate(16000)
    }
}

impl MelConfig {
    /// 80 bands, 25 ms window, 5 ms hop, full band.
    pub fn for_rate(sample_rate: u32) -> Self {
        let sr = sample_rate as f64;
        let window = (0.025 * sr).round() as usize;
        Self {
            bands: 80,
            fft_size: (2 * window).next_power_of_two(),
            window,
            hop: (0.005 * sr).round() as usize,
            fmin: 0.0,
            fmax: sr / 2.0,
            log_floor: 1e-10f64.ln(),
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.bands == 0 {
            return invalid("mel band count must be positive");
        }
        if !(0 < self.hop && self.hop <= self.window && self.window <= self.fft_size) {
            return invalid(format!(
                "need 0 < hop ({}) <= window ({}) <= fft_size ({})",
                self.hop, self.window, self.fft_size
            ));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= f64::from(sample_rate) / 2.0) {
            return invalid(format!("need 0 <= fmin < fmax <= nyquist, got {}..{}", self.fmin, self.fmax));
        }
        Ok(())
    }

    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window {
            0
        } else {
            (len - self.window) / self.hop + 1
        }
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

fn mel_edges(cfg: &MelConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    (0..cfg.bands + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.bands + 1) as f64))
        .collect()
}

/// Peak frequency of each triangular filter.
pub fn mel_center_frequencies(cfg: &MelConfig) -> Vec<f64> {
    let edges = mel_edges(cfg);
    edges[1..=cfg.bands].to_vec()
}

/// `bands x (fft_size/2 + 1)` triangular weights.
pub fn mel_filterbank(cfg: &MelConfig, sample_rate: u32) -> Vec<Vec<f64>> {
    let edges = mel_edges(cfg);
    let bins = cfg.fft_size / 2 + 1;
    let bin_hz = f64::from(sample_rate) / cfg.fft_size as f64;
    (0..cfg.bands)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= l || f >= r {
                        0.0
                    } else if f <= c {
                        (f - l) / (c - l)
                    } else {
                        (r - f) / (r - c)
                    }
                })
                .collect()
        })
        .collect()
}

pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Log mel spectrogram over `floor((len - window) / hop) + 1` unpadded frames.
pub fn mel_spectrogram(wav: &Waveform, cfg: &MelConfig) -> Result<FeatureMatrix> {
    cfg.validate(wav.sample_rate())?;
    if wav.len() < cfg.window {
        return invalid(format!("{} samples is shorter than one {}-sample window", wav.len(), cfg.window));
    }
    let frames = cfg.frame_count(wav.len());
    let bank = mel_filterbank(cfg, wav.sample_rate());
    let window = hann(cfg.window);
    let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let mut power = vec![0.0; cfg.fft_size / 2 + 1];
    let mut values = Vec::with_capacity(frames * cfg.bands);
    let x = wav.samples();
    for f in 0..frames {
        let start = f * cfg.hop;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, w) in window.iter().enumerate() {
            buf[i].re = x[start + i] * w;
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for filt in &bank {
            let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            values.push(if e > 0.0 { e.ln().max(cfg.log_floor) } else { cfg.log_floor });
        }
    }
    FeatureMatrix::new(values, frames, cfg.bands, cfg.hop as f64 / f64::from(wav.sample_rate()), FeatureKind::Mel)
}
