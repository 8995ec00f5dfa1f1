use super::Waveform;
use crate::error::{invalid, Result};

/// Mu-law companding quantizer with `mu = 2^bits - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuLaw {
    bits: u32,
    mu: f64,
}

/// Encoded indices plus the number of input samples that had to be clamped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MuLawEncoded {
    pub indices: Vec<u32>,
    pub clipped: usize,
}

impl MuLaw {
    pub fn new(bits: u32) -> Result<Self> {
        if !(2..=16).contains(&bits) {
            return invalid(format!("mu-law bits must be in [2, 16], got {bits}"));
        }
        Ok(Self { bits, mu: f64::from((1u32 << bits) - 1) })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn classes(&self) -> usize {
        1 << self.bits
    }

    /// Expects `x` in [-1, 1]; values outside are clamped.
    pub fn encode_sample(&self, x: f64) -> u32 {
        let x = x.clamp(-1.0, 1.0);
        let y = x.signum() * (self.mu * x.abs()).ln_1p() / self.mu.ln_1p();
        ((y + 1.0) / 2.0 * self.mu + 0.5).floor() as u32
    }

    pub fn decode_sample(&self, index: u32) -> f64 {
        let y = 2.0 * f64::from(index) / self.mu - 1.0;
        y.signum() * ((1.0 + self.mu).powf(y.abs()) - 1.0) / self.mu
    }

    pub fn encode(&self, samples: &[f64]) -> MuLawEncoded {
        let clipped = samples.iter().filter(|s| s.abs() > 1.0).count();
        MuLawEncoded { indices: samples.iter().map(|&s| self.encode_sample(s)).collect(), clipped }
    }

    pub fn decode(&self, indices: &[u32], sample_rate: u32) -> Result<Waveform> {
        if let Some(&bad) = indices.iter().find(|&&i| f64::from(i) > self.mu) {
            return invalid(format!("index {bad} exceeds {}-bit range", self.bits));
        }
        Waveform::new(indices.iter().map(|&i| self.decode_sample(i)).collect(), sample_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn midpoint_and_endpoints() {
        let q = MuLaw::new(10).unwrap();
        assert_eq!(q.encode_sample(0.0), 512);
        assert_eq!(q.encode_sample(-1.0), 0);
        assert_eq!(q.encode_sample(1.0), 1023);
        assert_eq!(q.classes(), 1024);
    }

    #[test]
    fn round_trip_error_bounded() {
        let q = MuLaw::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let enc = q.encode(&xs);
        assert_eq!(enc.clipped, 0);
        let dec = q.decode(&enc.indices, 16000).unwrap();
        let worst = xs.iter().zip(dec.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.01, "max error {worst}");
    }

    #[test]
    fn out_of_range_is_clamped_and_counted() {
        let q = MuLaw::new(8).unwrap();
        let enc = q.encode(&[1.5, -3.0, 0.2]);
        assert_eq!(enc.indices[..2], [255, 0]);
        assert_eq!(enc.clipped, 2);
    }

    #[test]
    fn bad_bits_and_indices() {
        assert!(MuLaw::new(1).is_err());
        assert!(MuLaw::new(17).is_err());
        assert!(MuLaw::new(8).unwrap().decode(&[256], 8000).is_err());
    }

    proptest! {
        #[test]
        fn encode_is_monotone(a in -1.2f64..1.2, b in -1.2f64..1.2, bits in 2u32..=16) {
            let q = MuLaw::new(bits).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(q.encode_sample(lo) <= q.encode_sample(hi));
        }
    }
}
