use super::Waveform;
use crate::error::{invalid, Result};

const FRAME_SECONDS: f64 = 0.02;
const NOISE_PERCENTILE: f64 = 15.0;
const SIGNAL_PERCENTILE: f64 = 95.0;
const POWER_FLOOR: f64 = 1e-20;

/// Linear-interpolated percentile (`p` in [0, 100]) of unsorted data.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mean power in dB of consecutive non-overlapping frames.
pub fn frame_power_db(samples: &[f64], frame: usize) -> Vec<f64> {
    samples
        .chunks_exact(frame.max(1))
        .map(|c| 10.0 * (c.iter().map(|s| s * s).sum::<f64>() / c.len() as f64 + POWER_FLOOR).log10())
        .collect()
}

/// Histogram-style SNR estimate: the 95th percentile of 20 ms frame power
/// (dB) minus the 15th percentile.
pub fn estimate_snr(wav: &Waveform) -> Result<f64> {
    if wav.duration() < 0.5 {
        return invalid(format!("SNR estimation needs at least 0.5 s, got {:.3} s", wav.duration()));
    }
    let frame = (FRAME_SECONDS * f64::from(wav.sample_rate())).round().max(1.0) as usize;
    let db = frame_power_db(wav.samples(), frame);
    Ok(percentile(&db, SIGNAL_PERCENTILE) - percentile(&db, NOISE_PERCENTILE))
}
