use rustfft::{num_complex::Complex, FftPlanner};

use crate::signal::{hann, percentile, Waveform};

const FRAME_SECONDS: f64 = 0.032;
const NOISE_FRACTION: f64 = 0.1;
const OVERSUBTRACTION: f64 = 2.0;
const GAIN_FLOOR: f64 = 0.1;
/// Caps each bin's noise estimate at this multiple of the across-bin median,
/// so a stationary tone is not mistaken for noise.
const MEDIAN_CAP: f64 = 3.0;

/// Spectral subtraction with a Wiener-style gain floor.
///
/// The noise profile is the mean power spectrum of the quietest 10% of
/// frames. Frames are Hann-windowed at 50% overlap and overlap-added.
pub fn baseline_pre_enhance(wav: &Waveform) -> Waveform {
    let n = ((FRAME_SECONDS * f64::from(wav.sample_rate())) as usize).next_power_of_two().max(8);
    let hop = n / 2;
    let x = wav.samples();
    if x.is_empty() {
        return wav.clone();
    }
    let mut padded = vec![0.0; hop];
    padded.extend_from_slice(x);
    padded.resize(padded.len() + n, 0.0);
    let frames = (padded.len() - n) / hop + 1;
    let window = hann(n);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let spectra: Vec<Vec<Complex<f64>>> = (0..frames)
        .map(|f| {
            let mut buf: Vec<Complex<f64>> = (0..n).map(|i| Complex::new(padded[f * hop + i] * window[i], 0.0)).collect();
            fwd.process(&mut buf);
            buf
        })
        .collect();
    let energy: Vec<f64> = spectra.iter().map(|s| s.iter().map(|c| c.norm_sqr()).sum()).collect();
    let cut = percentile(&energy, NOISE_FRACTION * 100.0);
    let quiet: Vec<&Vec<Complex<f64>>> = spectra.iter().zip(&energy).filter(|(_, &e)| e <= cut).map(|(s, _)| s).collect();
    let mut noise = vec![0.0; n];
    for s in &quiet {
        for (acc, c) in noise.iter_mut().zip(s.iter()) {
            *acc += c.norm_sqr();
        }
    }
    noise.iter_mut().for_each(|v| *v /= quiet.len().max(1) as f64);
    let median = percentile(&noise, 50.0);
    noise.iter_mut().for_each(|v| *v = v.min(MEDIAN_CAP * median));

    let mut out = vec![0.0; padded.len()];
    for (f, mut s) in spectra.into_iter().enumerate() {
        for (c, &nz) in s.iter_mut().zip(&noise) {
            let p = c.norm_sqr();
            let g = if p > 0.0 { (1.0 - OVERSUBTRACTION * nz / p).max(GAIN_FLOOR * GAIN_FLOOR).sqrt() } else { 0.0 };
            *c *= g;
        }
        inv.process(&mut s);
        for (i, c) in s.iter().enumerate() {
            out[f * hop + i] += c.re / n as f64;
        }
    }
    let samples = out[hop..hop + x.len()].iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Waveform::new(samples, wav.sample_rate()).expect("finite enhancement")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::estimate_snr;
    use crate::toy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clean_tone_survives() {
        let w = toy::tone(500.0, 16000, 1.0, 0.5);
        let y = baseline_pre_enhance(&w);
        assert_eq!(y.len(), w.len());
        let mid = 2000..14000;
        let rms = |s: &[f64]| (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt();
        let ratio = rms(&y.samples()[mid.clone()]) / rms(&w.samples()[mid]);
        assert!((ratio - 1.0).abs() <= 0.1, "{ratio}");
    }

    #[test]
    fn noisy_tone_gains_snr() {
        let clean = toy::gated_tone(440.0, 8000, 3.0, 0.3, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let std = (0.5 * 0.25 / 10.0f64).sqrt();
        let noise = toy::white_noise(clean.len(), std, &mut rng);
        let noisy = clean.with_samples(clean.samples().iter().zip(&noise).map(|(a, b)| a + b).collect()).unwrap();
        let before = estimate_snr(&noisy).unwrap();
        let after = estimate_snr(&baseline_pre_enhance(&noisy)).unwrap();
        assert!(after >= before + 3.0, "{before} -> {after}");
    }

    #[test]
    fn silence_not_amplified() {
        let w = Waveform::silence(4000, 8000);
        assert!(baseline_pre_enhance(&w).rms() <= w.rms());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let quiet = w.with_samples(toy::white_noise(4000, 1e-3, &mut rng)).unwrap();
        assert!(baseline_pre_enhance(&quiet).rms() <= quiet.rms());
    }
}
