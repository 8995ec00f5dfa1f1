//! Browser demo: mel spectrogram of a noisy toy utterance, the mu-law
//! companding curve, and an EER explorer over two Gaussian score sets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spoofbench_core::corpus::add_noise;
use spoofbench_core::countermeasure::{compute_eer, ScoreSet};
use spoofbench_core::signal::{estimate_snr, mel_spectrogram, MelConfig, MuLaw};
use spoofbench_core::toy::{self, random_utterance, Speaker};
use wasm_bindgen::prelude::*;

const RATE: u32 = 8000;

fn js_err(e: spoofbench_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Log-mel frames, row-major `[frames, bands]`.
#[wasm_bindgen]
pub struct MelView {
    frames: usize,
    bands: usize,
    values: Vec<f64>,
    snr_db: f64,
}

#[wasm_bindgen]
impl MelView {
    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[wasm_bindgen(getter)]
    pub fn bands(&self) -> usize {
        self.bands
    }

    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    /// Blind SNR estimate of the noisy waveform; NaN when it is too short.
    #[wasm_bindgen(getter)]
    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }
}

/// A random toy utterance from `seed`, with white noise at `snr_db`.
#[wasm_bindgen]
pub fn noisy_mel(seed: u64, phones: usize, snr_db: f64, bands: usize) -> Result<MelView, JsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let utt = random_utterance(Speaker::SOURCE, phones.clamp(1, 20), RATE, 40, &mut rng);
    let wav = add_noise(&utt.wav, snr_db, &mut rng).map_err(js_err)?;
    let cfg = MelConfig { bands, ..MelConfig::for_rate(RATE) };
    let mel = mel_spectrogram(&wav, &cfg).map_err(js_err)?;
    Ok(MelView { frames: mel.frames(), bands: mel.dims(), values: mel.values().to_vec(), snr_db: estimate_snr(&wav).unwrap_or(f64::NAN) })
}

/// `points` amplitudes in [-1, 1] interleaved with their `bits`-bit
/// mu-law round trip: `[x0, y0, x1, y1, ...]`.
#[wasm_bindgen]
pub fn mulaw_curve(bits: u32, points: usize) -> Result<Vec<f64>, JsError> {
    let m = MuLaw::new(bits).map_err(js_err)?;
    let n = points.max(2);
    Ok((0..n)
        .flat_map(|i| {
            let x = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            [x, m.decode_sample(m.encode_sample(x))]
        })
        .collect())
}

/// EER in percent of two unit-variance Gaussian score sets whose means are
/// `separation` apart.
#[wasm_bindgen]
pub fn gaussian_eer(separation: f64, count: usize, seed: u64) -> Result<f64, JsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = count.max(1);
    let genuine = toy::white_noise(n, 1.0, &mut rng).into_iter().map(|z| z + separation).collect();
    let spoof = toy::white_noise(n, 1.0, &mut rng);
    compute_eer(&ScoreSet { genuine, spoof }).map_err(js_err)
}

/// EER in percent of explicit score lists.
#[wasm_bindgen]
pub fn eer(genuine: Vec<f64>, spoof: Vec<f64>) -> Result<f64, JsError> {
    compute_eer(&ScoreSet { genuine, spoof }).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_view_shape() {
        let v = noisy_mel(1, 5, 10.0, 40).unwrap();
        assert_eq!(v.bands(), 40);
        assert_eq!(v.values().len(), v.frames() * 40);
    }

    #[test]
    fn mulaw_curve_is_monotone_and_tight() {
        let c = mulaw_curve(8, 257).unwrap();
        let ys: Vec<f64> = c.chunks(2).map(|p| p[1]).collect();
        assert!(ys.windows(2).all(|w| w[0] <= w[1]));
        assert!(c.chunks(2).all(|p| (p[0] - p[1]).abs() < 0.05));
    }

    #[test]
    fn eer_falls_with_separation() {
        let a = gaussian_eer(0.0, 2000, 1).unwrap();
        let b = gaussian_eer(3.0, 2000, 1).unwrap();
        assert!((a - 50.0).abs() < 5.0, "{a}");
        assert!(b < 10.0, "{b}");
        assert_eq!(eer(vec![3.0, 4.0, 5.0, 6.0], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), 25.0);
    }
}
