use std::f64::consts::PI;

use super::Waveform;
use crate::error::{invalid, Result};

const ZERO_CROSSINGS: f64 = 24.0;
const ROLLOFF: f64 = 0.95;
const KAISER_BETA: f64 = 8.6;

/// Band-limited sample-rate conversion with a Kaiser-windowed sinc kernel.
///
/// Output length is `ceil(len * target / source)`; the passband edge sits
/// at 95% of the lower of the two Nyquist frequencies.
pub fn resample(wav: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return invalid("target sample rate must be positive");
    }
    let src = wav.sample_rate();
    if src == target_rate {
        return Ok(wav.clone());
    }
    let x = wav.samples();
    let out_len = ((x.len() as u64 * u64::from(target_rate)).div_ceil(u64::from(src))) as usize;
    // cutoff in cycles per input sample
    let fc = 0.5 * ROLLOFF * (f64::from(target_rate) / f64::from(src)).min(1.0);
    let half_width = ZERO_CROSSINGS / (2.0 * fc);
    let norm = bessel_i0(KAISER_BETA);

    let kernel = |tau: f64| -> f64 {
        let r = tau / half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let arg = 2.0 * fc * tau;
        let sinc = if arg.abs() < 1e-12 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
        2.0 * fc * sinc * bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm
    };

    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        // exact position n * src / target in input samples
        let num = n as u64 * u64::from(src);
        let t = (num / u64::from(target_rate)) as f64
            + (num % u64::from(target_rate)) as f64 / f64::from(target_rate);
        let lo = ((t - half_width).ceil().max(0.0)) as usize;
        let hi = ((t + half_width).floor() as isize).min(x.len() as isize - 1);
        let mut acc = 0.0;
        if hi >= 0 {
            for (k, &v) in x.iter().enumerate().take(hi as usize + 1).skip(lo) {
                acc += v * kernel(t - k as f64);
            }
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}
