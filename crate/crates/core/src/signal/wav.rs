use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{invalid, Result};

/// Read a mono 16-bit PCM RIFF/WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let mut reader = WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return invalid(format!("{}: expected mono, found {} channels", path.as_ref().display(), spec.channels));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return invalid(format!("{}: expected 16-bit PCM", path.as_ref().display()));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

/// Write as mono 16-bit PCM. Samples outside [-1, 1] are clipped.
pub fn write_wav(path: impl AsRef<Path>, wav: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wav.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in wav.samples() {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}
