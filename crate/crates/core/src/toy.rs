//! Synthetic audio used by the desk-scale pipeline and by tests: tones,
//! noise, and a small phone-based "speech" synthesizer whose alignments are
//! known by construction.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::signal::Waveform;
use crate::tts::PhoneSpan;

/// Peak amplitude of [`gated_tone`].
pub const GATED_TONE_AMPLITUDE: f64 = 0.5;

/// Phone inventory of the toy language. `pau` is silence.
pub const PHONES: [&str; 9] = ["pau", "a", "e", "i", "o", "u", "m", "s", "t"];

pub fn tone(freq: f64, rate: u32, seconds: f64, amplitude: f64) -> Waveform {
    let n = (seconds * f64::from(rate)).round() as usize;
    let s = (0..n).map(|i| amplitude * (2.0 * PI * freq * i as f64 / f64::from(rate)).sin()).collect();
    Waveform::new(s, rate).expect("finite tone")
}

/// A tone switched on for `on` seconds and off for `off` seconds, repeatedly,
/// with 5 ms raised-cosine ramps at every switch.
pub fn gated_tone(freq: f64, rate: u32, seconds: f64, on: f64, off: f64) -> Waveform {
    let sr = f64::from(rate);
    let n = (seconds * sr).round() as usize;
    let ramp = 0.005;
    let s = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let phase = t % (on + off);
            let env = if phase >= on {
                0.0
            } else if phase < ramp {
                0.5 - 0.5 * (PI * phase / ramp).cos()
            } else if phase > on - ramp {
                0.5 - 0.5 * (PI * (on - phase) / ramp).cos()
            } else {
                1.0
            };
            GATED_TONE_AMPLITUDE * env * (2.0 * PI * freq * t).sin()
        })
        .collect();
    Waveform::new(s, rate).expect("finite tone")
}

pub fn white_noise(len: usize, std: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Voice parameters of a synthetic talker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Speaker {
    pub f0: f64,
    /// Multiplies every phone's formant frequencies.
    pub formant_scale: f64,
}

impl Speaker {
    pub const SOURCE: Speaker = Speaker { f0: 220.0, formant_scale: 1.15 };
    pub const TARGET: Speaker = Speaker { f0: 120.0, formant_scale: 0.9 };
}

/// A synthetic utterance and its frame-level phone alignment.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub wav: Waveform,
    pub transcript: String,
    pub alignment: Vec<PhoneSpan>,
}

fn formants(phone: &str) -> Option<(f64, f64)> {
    Some(match phone {
        "a" => (750.0, 1200.0),
        "e" => (500.0, 1900.0),
        "i" => (300.0, 2300.0),
        "o" => (500.0, 900.0),
        "u" => (320.0, 800.0),
        "m" => (250.0, 1100.0),
        _ => return None,
    })
}

/// Render a phone sequence. Each phone lasts `frames` hops of `hop` samples.
pub fn render(speaker: Speaker, phones: &[(&str, usize)], rate: u32, hop: usize, rng: &mut impl Rng) -> Utterance {
    let sr = f64::from(rate);
    let mut samples = Vec::new();
    let mut alignment = Vec::new();
    let mut frame = 0;
    let mut phase = 0.0;
    for &(phone, frames) in phones {
        let n = frames * hop;
        let start = samples.len();
        match (phone, formants(phone)) {
            ("pau", _) => samples.extend(std::iter::repeat_n(0.0, n)),
            (_, Some((f1, f2))) => {
                let (f1, f2) = (f1 * speaker.formant_scale, f2 * speaker.formant_scale);
                let harmonics = ((sr / 2.0 - 100.0) / speaker.f0).floor() as usize;
                let weights: Vec<f64> = (1..=harmonics)
                    .map(|h| {
                        let f = h as f64 * speaker.f0;
                        (-((f - f1) / 150.0).powi(2)).exp() + 0.6 * (-((f - f2) / 200.0).powi(2)).exp() + 0.02
                    })
                    .collect();
                let norm: f64 = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
                for i in 0..n {
                    let t = i as f64 / n as f64;
                    let f0 = speaker.f0 * (1.0 + 0.05 * (PI * t).sin());
                    phase += 2.0 * PI * f0 / sr;
                    let env = (PI * t).sin().powf(0.5);
                    let v: f64 = weights.iter().enumerate().map(|(h, w)| w * ((h + 1) as f64 * phase).sin()).sum();
                    samples.push(0.35 * env * v / norm);
                }
            }
            _ => {
                // fricative / plosive: shaped noise burst
                let amp = if phone == "s" { 0.08 } else { 0.15 };
                let mut prev = 0.0;
                for i in 0..n {
                    let t = i as f64 / n as f64;
                    let env = if phone == "t" { (-6.0 * t).exp() } else { (PI * t).sin() };
                    let w: f64 = rng.sample(StandardNormal);
                    let v = w - 0.7 * prev;
                    prev = w;
                    samples.push(amp * env * v);
                }
            }
        }
        debug_assert_eq!(samples.len() - start, n);
        alignment.push(PhoneSpan { phone: phone.to_string(), start_frame: frame, end_frame: frame + frames });
        frame += frames;
    }
    let transcript = phones.iter().map(|p| p.0).filter(|p| *p != "pau").collect::<Vec<_>>().join(" ");
    Utterance { wav: Waveform::new(samples, rate).expect("finite synthesis"), transcript, alignment }
}

/// Random phone sequence of `n_phones` phones framed by pauses.
pub fn random_utterance(speaker: Speaker, n_phones: usize, rate: u32, hop: usize, rng: &mut impl Rng) -> Utterance {
    let frames_per_second = f64::from(rate) / hop as f64;
    let dur = |lo: f64, hi: f64, rng: &mut dyn rand::RngCore| -> usize {
        ((lo + (hi - lo) * rng.random::<f64>()) * frames_per_second).round().max(1.0) as usize
    };
    let mut phones: Vec<(&str, usize)> = vec![("pau", dur(0.15, 0.25, rng))];
    for i in 0..n_phones {
        let p = PHONES[1 + rng.random_range(0..PHONES.len() - 1)];
        phones.push((p, dur(0.08, 0.2, rng)));
        if i + 1 < n_phones && rng.random::<f64>() < 0.25 {
            phones.push(("pau", dur(0.1, 0.2, rng)));
        }
    }
    phones.push(("pau", dur(0.15, 0.25, rng)));
    render(speaker, &phones, rate, hop, rng)
}

/// `(noisy, clean)` pairs of random utterances with white noise at `snr_db`.
pub fn noisy_pairs(count: usize, rate: u32, snr_db: f64, seed: u64) -> Vec<(Waveform, Waveform)> {
    use crate::corpus::{corrupt, ConditionTag, CorruptParams};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let clean = random_utterance(Speaker::SOURCE, 6, rate, rate as usize / 200, &mut rng).wav;
            let params = CorruptParams { snr_db, seed: seed.wrapping_mul(1000) + i as u64, ..CorruptParams::default() };
            let noisy = corrupt(&clean, &ConditionTag::N, &params).expect("noise corruption");
            (noisy, clean)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alignment_covers_waveform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let utt = random_utterance(Speaker::TARGET, 6, 8000, 64, &mut rng);
        let last = utt.alignment.last().unwrap().end_frame;
        assert_eq!(utt.wav.len(), last * 64);
        assert!(utt.alignment.windows(2).all(|w| w[0].end_frame == w[1].start_frame));
        assert!(utt.wav.samples().iter().all(|s| s.abs() <= 1.0));
    }

    #[test]
    fn gated_tone_is_silent_when_off() {
        let wav = gated_tone(440.0, 8000, 1.0, 0.25, 0.25);
        assert!(wav.samples()[2100..3900].iter().all(|&s| s == 0.0));
        assert!(wav.samples()[100..1900].iter().any(|&s| s.abs() > 0.4));
    }
}
