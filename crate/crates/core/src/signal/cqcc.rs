//! Constant-Q cepstral coefficients: constant-Q transform, log power,
//! resampling onto a uniform frequency grid, DCT, then deltas.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::mel::hann;
use super::{append_deltas, FeatureKind, FeatureMatrix, Waveform};
use crate::error::{invalid, Result};

const POWER_FLOOR: f64 = 1e-30;
const KERNEL_SPARSITY: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CqccConfig {
    pub bins_per_octave: usize,
    /// Octaves below Nyquist covered by the transform.
    pub octaves: usize,
    /// Static coefficients kept, c0 included. Deltas triple the output width.
    pub n_coeffs: usize,
    pub resample_points: usize,
    pub hop: usize,
}

impl Default for CqccConfig {
    fn default() -> Self {
        Self { bins_per_octave: 96, octaves: 5, n_coeffs: 20, resample_points: 512, hop: 128 }
    }
}

impl CqccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins_per_octave == 0 || self.octaves == 0 || self.n_coeffs == 0 || self.resample_points == 0 || self.hop == 0 {
            return invalid("CQCC counts must all be positive");
        }
        if self.n_coeffs > self.resample_points {
            return invalid(format!("n_coeffs {} exceeds resample_points {}", self.n_coeffs, self.resample_points));
        }
        Ok(())
    }

    pub fn output_dims(&self) -> usize {
        3 * self.n_coeffs
    }
}

struct SpectralKernel {
    start: usize,
    weights: Vec<Complex<f64>>,
}

struct ConstantQ {
    fft_size: usize,
    kernels: Vec<SpectralKernel>,
    fmin: f64,
    bins_per_octave: usize,
}

impl ConstantQ {
    fn new(cfg: &CqccConfig, sample_rate: u32) -> Self {
        let sr = f64::from(sample_rate);
        let b = cfg.bins_per_octave as f64;
        let n_bins = cfg.bins_per_octave * cfg.octaves;
        let fmin = sr / 2.0 / 2f64.powi(cfg.octaves as i32);
        let q = 1.0 / (2f64.powf(1.0 / b) - 1.0);
        let longest = (q * sr / fmin).ceil() as usize;
        let fft_size = longest.next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
        let kernels = (0..n_bins)
            .map(|k| {
                let f = fmin * 2f64.powf(k as f64 / b);
                let len = (q * sr / f).ceil() as usize;
                let offset = fft_size / 2 - len / 2;
                let win = hann(len);
                buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
                for (n, w) in win.iter().enumerate() {
                    let phase = 2.0 * PI * f * (n as f64 - (len / 2) as f64) / sr;
                    buf[offset + n] = Complex::from_polar(w / len as f64, phase);
                }
                fft.process(&mut buf);
                // Parseval: sum x conj(k) = (1/N) sum X conj(K)
                let peak = buf.iter().map(|c| c.norm()).fold(0.0, f64::max);
                let keep = |c: &Complex<f64>| c.norm() >= peak * KERNEL_SPARSITY;
                let start = buf.iter().position(keep).unwrap_or(0);
                let end = buf.iter().rposition(keep).map_or(start, |e| e + 1);
                let weights = buf[start..end].iter().map(|c| c.conj() / fft_size as f64).collect();
                SpectralKernel { start, weights }
            })
            .collect();
        Self { fft_size, kernels, fmin, bins_per_octave: cfg.bins_per_octave }
    }

    /// Log power per constant-Q bin for each frame centred on `i * hop`.
    fn log_power(&self, x: &[f64], hop: usize) -> Vec<Vec<f64>> {
        let fft = FftPlanner::new().plan_fft_forward(self.fft_size);
        let half = self.fft_size / 2;
        let frames = (x.len() - 1) / hop + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_size];
        (0..frames)
            .map(|i| {
                let centre = i * hop;
                for (j, c) in buf.iter_mut().enumerate() {
                    let idx = (centre + j) as isize - half as isize;
                    let v = if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] } else { 0.0 };
                    *c = Complex::new(v, 0.0);
                }
                fft.process(&mut buf);
                self.kernels
                    .iter()
                    .map(|k| {
                        let coef: Complex<f64> = k.weights.iter().zip(&buf[k.start..]).map(|(w, v)| w * v).sum();
                        (coef.norm_sqr() + POWER_FLOOR).ln()
                    })
                    .collect()
            })
            .collect()
    }

    /// Linear interpolation of a geometrically spaced spectrum onto
    /// `points` uniformly spaced frequencies spanning the same range.
    fn to_uniform(&self, log_spec: &[f64], points: usize) -> Vec<f64> {
        let b = self.bins_per_octave as f64;
        let last = log_spec.len() - 1;
        let fmax = self.fmin * 2f64.powf(last as f64 / b);
        (0..points)
            .map(|p| {
                let f = if points == 1 { self.fmin } else { self.fmin + (fmax - self.fmin) * p as f64 / (points - 1) as f64 };
                let pos = (b * (f / self.fmin).log2()).clamp(0.0, last as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(last);
                log_spec[lo] + (log_spec[hi] - log_spec[lo]) * (pos - lo as f64)
            })
            .collect()
    }
}

/// First `n` DCT-II coefficients of a log spectrum.
pub fn cepstrum_from_log_spectrum(log_spec: &[f64], n: usize) -> Vec<f64> {
    let len = log_spec.len() as f64;
    (0..n)
        .map(|q| {
            log_spec
                .iter()
                .enumerate()
                .map(|(j, v)| v * (PI * q as f64 * (j as f64 + 0.5) / len).cos())
                .sum()
        })
        .collect()
}

/// CQCC features with deltas: `frames x 3*n_coeffs`.
pub fn extract_cqcc(wav: &Waveform, cfg: &CqccConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    if wav.len() < cfg.hop {
        return invalid(format!("{} samples is shorter than one {}-sample CQCC hop", wav.len(), cfg.hop));
    }
    let cq = ConstantQ::new(cfg, wav.sample_rate());
    let rows: Vec<Vec<f64>> = cq
        .log_power(wav.samples(), cfg.hop)
        .iter()
        .map(|spec| cepstrum_from_log_spectrum(&cq.to_uniform(spec, cfg.resample_points), cfg.n_coeffs))
        .collect();
    let statics = FeatureMatrix::from_rows(&rows, cfg.hop as f64 / f64::from(wav.sample_rate()), FeatureKind::Cqcc)?;
    append_deltas(&statics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> CqccConfig {
        CqccConfig { bins_per_octave: 24, octaves: 4, n_coeffs: 12, resample_points: 128, hop: 256 }
    }

    fn noise(seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new(toy::white_noise(8000, 0.1, &mut rng), 8000).unwrap()
    }

    #[test]
    fn constant_log_spectrum_has_only_c0() {
        let c = cepstrum_from_log_spectrum(&vec![-3.5; 256], 20);
        assert!((c[0] + 3.5 * 256.0).abs() < 1e-9);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-9), "{c:?}");
    }

    #[test]
    fn gain_only_moves_c0() {
        let cfg = CqccConfig::default();
        let wav = noise(1);
        let a = extract_cqcc(&wav, &cfg).unwrap();
        let b = extract_cqcc(&wav.scaled(0.3), &cfg).unwrap();
        assert_eq!(a.dims(), 60);
        let shift = b.get(0, 0) - a.get(0, 0);
        for t in 0..a.frames() {
            assert!((b.get(t, 0) - a.get(t, 0) - shift).abs() < 1e-6);
            for d in 1..a.dims() {
                assert!((a.get(t, d) - b.get(t, d)).abs() < 1e-6, "frame {t} dim {d}");
            }
        }
    }

    #[test]
    fn tone_separates_from_noise() {
        let cfg = small();
        let tone = toy::tone(500.0, 8000, 1.0, 0.3);
        let m_tone = extract_cqcc(&tone, &cfg).unwrap().mean_row();
        let m_a = extract_cqcc(&noise(2), &cfg).unwrap().mean_row();
        let m_b = extract_cqcc(&noise(3), &cfg).unwrap().mean_row();
        let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist(&m_tone, &m_a) > dist(&m_a, &m_b));
    }

    #[test]
    fn rejects_bad_config_and_short_input() {
        let mut cfg = small();
        cfg.n_coeffs = 200;
        assert!(extract_cqcc(&noise(4), &cfg).is_err());
        assert!(extract_cqcc(&Waveform::silence(10, 8000), &small()).is_err());
    }
}
