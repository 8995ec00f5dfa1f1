//! Corpus preparation: pause segmentation, synthetic corruption,
//! training-regime composition and manifest files.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::signal::{estimate_snr, frame_power_db, percentile, read_wav, Waveform};

/// Recording condition of an utterance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ConditionTag {
    Clean,
    N,
    R,
    Nr,
    Dr,
    Enhanced(String),
    Original,
}

impl fmt::Display for ConditionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Clean => f.write_str("clean"),
            Self::N => f.write_str("n"),
            Self::R => f.write_str("r"),
            Self::Nr => f.write_str("nr"),
            Self::Dr => f.write_str("DR"),
            Self::Original => f.write_str("original"),
            Self::Enhanced(r) => write!(f, "enhanced({r})"),
        }
    }
}

impl FromStr for ConditionTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "clean" => Self::Clean,
            "n" => Self::N,
            "r" => Self::R,
            "nr" => Self::Nr,
            "DR" => Self::Dr,
            "original" => Self::Original,
            _ => match s.strip_prefix("enhanced(").and_then(|r| r.strip_suffix(')')) {
                Some(r) if REGIMES.iter().any(|g| g.name == r) => Self::Enhanced(r.to_string()),
                _ => return invalid(format!("unknown condition tag {s:?}")),
            },
        })
    }
}

impl From<ConditionTag> for String {
    fn from(t: ConditionTag) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for ConditionTag {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// A named combination of corrupted sources used to train the enhancer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Regime {
    pub name: &'static str,
    pub tags: &'static [ConditionTag],
}

pub const REGIMES: [Regime; 7] = [
    Regime { name: "DR", tags: &[ConditionTag::Dr] },
    Regime { name: "n", tags: &[ConditionTag::N] },
    Regime { name: "r", tags: &[ConditionTag::R] },
    Regime { name: "nr", tags: &[ConditionTag::Nr] },
    Regime { name: "DR+n", tags: &[ConditionTag::Dr, ConditionTag::N] },
    Regime { name: "DR+nr", tags: &[ConditionTag::Dr, ConditionTag::Nr] },
    Regime { name: "All", tags: &[ConditionTag::Dr, ConditionTag::N, ConditionTag::R, ConditionTag::Nr] },
];

pub fn regime(name: &str) -> Result<Regime> {
    REGIMES
        .iter()
        .copied()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::NotFound(format!("regime {name:?}")))
}

/// The eight data conditions a synthesizer can be conditioned on:
/// unenhanced data followed by the seven regimes.
pub fn condition_names() -> Vec<&'static str> {
    std::iter::once("original").chain(REGIMES.iter().map(|r| r.name)).collect()
}

/// Normalized scalar code in [0, 1] for a condition name.
pub fn condition_code(name: &str) -> Result<f64> {
    let names = condition_names();
    let idx = names.iter().position(|n| *n == name).ok_or_else(|| Error::NotFound(format!("condition {name:?}")))?;
    Ok(idx as f64 / (names.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub audio_path: PathBuf,
    #[serde(default)]
    pub transcript: String,
    pub condition: ConditionTag,
    #[serde(rename = "duration_s")]
    pub duration: f64,
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    records: Vec<UtteranceRecord>,
}

impl CorpusManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<UtteranceRecord>) -> Result<Self> {
        let mut m = Self::new();
        for r in records {
            m.push(r)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, r: UtteranceRecord) -> Result<()> {
        if !(r.duration > 0.0) {
            return invalid(format!("record {} has non-positive duration", r.id));
        }
        if self.records.iter().any(|x| x.id == r.id) {
            return invalid(format!("duplicate record id {}", r.id));
        }
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_duration(&self) -> f64 {
        self.records.iter().map(|r| r.duration).sum()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for r in &self.records {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let f = BufReader::new(fs::File::open(path)?);
        let mut records = Vec::new();
        for line in f.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Self::from_records(records)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub min_pause: f64,
    pub min_seg: f64,
    pub max_seg: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { min_pause: 0.3, min_seg: 0.5, max_seg: 24.5 }
    }
}

/// A voiced stretch cut from a longer recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub wav: Waveform,
}

const VAD_FRAME_SECONDS: f64 = 0.01;
const VAD_MARGIN_DB: f64 = 6.0;
const VAD_HANGOVER_SECONDS: f64 = 0.2;
const VAD_ABSOLUTE_FLOOR_DB: f64 = -70.0;

/// Energy VAD: frames above the noise floor (15th percentile) plus 6 dB are
/// voiced. Gaps shorter than the hangover or `min_pause` are bridged.
/// Spans longer than `max_seg` are cut at their quietest interior frame.
pub fn segment_on_pauses(wav: &Waveform, cfg: &SegmentConfig) -> Result<Vec<Segment>> {
    if !(cfg.min_pause > 0.0) || !(cfg.min_seg < cfg.max_seg) {
        return invalid(format!("bad segmentation bounds {cfg:?}"));
    }
    let rate = f64::from(wav.sample_rate());
    let frame = (VAD_FRAME_SECONDS * rate).round().max(1.0) as usize;
    let db = frame_power_db(wav.samples(), frame);
    if db.is_empty() {
        return Ok(Vec::new());
    }
    let floor = percentile(&db, 15.0);
    let top = percentile(&db, 95.0);
    let threshold = (floor + VAD_MARGIN_DB).min(top - VAD_MARGIN_DB).max(VAD_ABSOLUTE_FLOOR_DB);
    let voiced: Vec<bool> = db.iter().map(|&d| d > threshold).collect();

    let bridge = ((cfg.min_pause.max(VAD_HANGOVER_SECONDS)) / VAD_FRAME_SECONDS).round() as usize;
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for (i, &v) in voiced.iter().enumerate() {
        if !v {
            continue;
        }
        match spans.last_mut() {
            Some((_, end)) if i - *end < bridge => *end = i + 1,
            _ => spans.push((i, i + 1)),
        }
    }

    let min_frames = (cfg.min_seg / VAD_FRAME_SECONDS).ceil() as usize;
    let max_frames = (cfg.max_seg / VAD_FRAME_SECONDS).floor() as usize;
    let mut out = Vec::new();
    for span in spans {
        for (a, b) in split_long(span, &db, min_frames, max_frames) {
            if b - a < min_frames {
                continue;
            }
            let (s, e) = (a * frame, (b * frame).min(wav.len()));
            out.push(Segment { start: s, wav: wav.with_samples(wav.samples()[s..e].to_vec())? });
        }
    }
    Ok(out)
}

fn split_long(span: (usize, usize), db: &[f64], min_frames: usize, max_frames: usize) -> Vec<(usize, usize)> {
    let (a, b) = span;
    if b - a <= max_frames {
        return vec![span];
    }
    // cut point keeps both halves at least min_frames long where possible
    let lo = a + min_frames.min((b - a) / 2);
    let hi = b - min_frames.min((b - a) / 2);
    let cut = (lo..hi).min_by(|&i, &j| db[i].total_cmp(&db[j])).unwrap_or((a + b) / 2);
    let mut left = split_long((a, cut), db, min_frames, max_frames);
    left.extend(split_long((cut, b), db, min_frames, max_frames));
    left
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptParams {
    pub snr_db: f64,
    pub rt60: f64,
    pub dr_cutoff_hz: f64,
    pub dr_snr_db: f64,
    pub seed: u64,
}

impl Default for CorruptParams {
    fn default() -> Self {
        Self { snr_db: 10.0, rt60: 0.4, dr_cutoff_hz: 4000.0, dr_snr_db: 25.0, seed: 0 }
    }
}

/// Applies a synthetic degradation. Output length equals input length.
pub fn corrupt(clean: &Waveform, kind: &ConditionTag, params: &CorruptParams) -> Result<Waveform> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    match kind {
        ConditionTag::Clean => Ok(clean.clone()),
        ConditionTag::N => add_noise(clean, params.snr_db, &mut rng),
        ConditionTag::R => reverberate(clean, params.rt60, &mut rng),
        ConditionTag::Nr => {
            let r = reverberate(clean, params.rt60, &mut rng)?;
            add_noise(&r, params.snr_db, &mut rng)
        }
        ConditionTag::Dr => {
            let lp = lowpass(clean, params.dr_cutoff_hz)?;
            add_noise(&lp, params.dr_snr_db, &mut rng)
        }
        other => invalid(format!("cannot synthesize condition {other}")),
    }
}

/// White noise whose power sits `snr_db` below the 95th-percentile 20 ms
/// frame power of `wav`.
pub fn add_noise(wav: &Waveform, snr_db: f64, rng: &mut ChaCha8Rng) -> Result<Waveform> {
    let frame = (0.02 * f64::from(wav.sample_rate())).round().max(1.0) as usize;
    let db = frame_power_db(wav.samples(), frame);
    let reference = if db.is_empty() { wav.rms().powi(2) } else { 10f64.powf(percentile(&db, 95.0) / 10.0) };
    let std = (reference / 10f64.powf(snr_db / 10.0)).sqrt();
    let out = wav.samples().iter().map(|s| s + std * { let z: f64 = StandardNormal.sample(rng); z }).collect();
    wav.with_samples(out)
}

/// Exponentially decaying white-noise tail after a unit direct path;
/// the result is rescaled to the input RMS.
pub fn synthetic_rir(rate: u32, rt60: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let len = ((rt60 * f64::from(rate)).round() as usize).max(1);
    let decay = 3.0 * std::f64::consts::LN_10 / (rt60 * f64::from(rate));
    let mut h: Vec<f64> = (0..len).map(|n| 0.3 * { let z: f64 = StandardNormal.sample(rng); z } * (-decay * n as f64).exp()).collect();
    h[0] = 1.0;
    h
}

fn reverberate(wav: &Waveform, rt60: f64, rng: &mut ChaCha8Rng) -> Result<Waveform> {
    if !(rt60 > 0.0) {
        return invalid(format!("rt60 must be positive, got {rt60}"));
    }
    let h = synthetic_rir(wav.sample_rate(), rt60, rng);
    let mut y = fft_convolve(wav.samples(), &h);
    y.truncate(wav.len());
    let rms = (y.iter().map(|v| v * v).sum::<f64>() / y.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        let g = wav.rms() / rms;
        y.iter_mut().for_each(|v| *v *= g);
    }
    wav.with_samples(y)
}

/// Zero-phase windowed-sinc low-pass.
pub fn lowpass(wav: &Waveform, cutoff_hz: f64) -> Result<Waveform> {
    let nyquist = f64::from(wav.sample_rate()) / 2.0;
    if !(cutoff_hz > 0.0) {
        return invalid(format!("cutoff must be positive, got {cutoff_hz}"));
    }
    if cutoff_hz >= nyquist {
        return Ok(wav.clone());
    }
    let half = 64usize;
    let fc = cutoff_hz / f64::from(wav.sample_rate());
    let taps: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let n = i as f64 - half as f64;
            let sinc = if n == 0.0 { 2.0 * fc } else { (2.0 * std::f64::consts::PI * fc * n).sin() / (std::f64::consts::PI * n) };
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (2 * half) as f64).cos();
            sinc * w
        })
        .collect();
    let full = fft_convolve(wav.samples(), &taps);
    let out = full[half..half + wav.len()].to_vec();
    wav.with_samples(out)
}

/// Full linear convolution via FFT.
pub(crate) fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let n = a.len() + b.len() - 1;
    let size = n.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&v| Complex::new(v, 0.0)).chain(std::iter::repeat(Complex::new(0.0, 0.0))).take(size).collect();
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&v| Complex::new(v, 0.0)).chain(std::iter::repeat(Complex::new(0.0, 0.0))).take(size).collect();
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    fa.iter_mut().zip(&fb).for_each(|(x, y)| *x *= y);
    inv.process(&mut fa);
    fa.iter().take(n).map(|c| c.re / size as f64).collect()
}

/// Concatenates the catalog entries named by `regime`, qualifying each id
/// with its tag.
pub fn compose_regime(catalog: &BTreeMap<ConditionTag, CorpusManifest>, regime: &[ConditionTag]) -> Result<CorpusManifest> {
    if regime.is_empty() {
        return invalid("empty regime");
    }
    let mut out = CorpusManifest::new();
    let mut seen = HashSet::new();
    for tag in regime {
        if !seen.insert(tag) {
            continue;
        }
        let m = catalog.get(tag).ok_or_else(|| Error::NotFound(format!("condition {tag} missing from catalog")))?;
        for r in m.records() {
            let mut q = r.clone();
            q.id = format!("{tag}/{}", r.id);
            out.push(q)?;
        }
    }
    Ok(out)
}

/// One record per readable WAV in `audio_dir`, with its transcript from
/// `<transcript_dir>/<stem>.txt` when present. Returns the number of files
/// that could not be read.
pub fn build_manifest(audio_dir: &Path, transcript_dir: &Path, condition: ConditionTag) -> Result<(CorpusManifest, usize)> {
    let mut paths: Vec<PathBuf> = fs::read_dir(audio_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    let mut out = CorpusManifest::new();
    let mut skipped = 0;
    for path in paths {
        let wav = match read_wav(&path) {
            Ok(w) if !w.is_empty() => w,
            Ok(_) | Err(_) => {
                log::warn!("skipping unreadable or empty audio {}", path.display());
                skipped += 1;
                continue;
            }
        };
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let transcript = fs::read_to_string(transcript_dir.join(format!("{stem}.txt"))).map(|s| s.trim().to_string()).unwrap_or_default();
        out.push(UtteranceRecord {
            id: stem,
            audio_path: path,
            transcript,
            condition: condition.clone(),
            duration: wav.duration(),
            snr_db: estimate_snr(&wav).ok(),
        })?;
    }
    if skipped > 0 {
        log::warn!("{skipped} file(s) skipped while building manifest for {}", audio_dir.display());
    }
    Ok((out, skipped))
}
