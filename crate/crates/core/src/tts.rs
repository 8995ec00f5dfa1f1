//! Autoregressive acoustic model: linguistic frames to mel frames with
//! previous-frame feedback.

use std::io::{BufRead, Write};
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::condition_code;
use crate::error::{invalid, Error, Result};
use crate::nn::layers::{self, dropout_mask};
use crate::nn::{check_loss, grad_check, probe_loss, rmsprop_step, Bound, Graph, ParameterSet, RmspropConfig, RmspropState, Tensor, Var};
use crate::signal::{FeatureKind, FeatureMatrix};
use crate::toy::PHONES;

pub const AR_KIND: &str = "ar-acoustic";

/// Phone one-hot, position within phone, position within utterance,
/// condition code.
pub const LINGUISTIC_DIMS: usize = PHONES.len() + 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneSpan {
    pub phone: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinguisticFrames {
    pub values: FeatureMatrix,
    pub condition: String,
    pub condition_code: f64,
}

impl LinguisticFrames {
    pub fn frames(&self) -> usize {
        self.values.frames()
    }
}

fn check_alignment(alignment: &[PhoneSpan]) -> Result<usize> {
    let mut next = 0;
    for s in alignment {
        if s.start_frame != next {
            return invalid(format!("alignment gap or overlap at frame {} (expected {next})", s.start_frame));
        }
        if s.end_frame <= s.start_frame {
            return invalid(format!("empty span for {:?} at frame {}", s.phone, s.start_frame));
        }
        next = s.end_frame;
    }
    if next == 0 {
        return invalid("empty alignment");
    }
    Ok(next)
}

/// Shortens an alignment so that it covers exactly `[0, frames)`.
pub fn clip_alignment(alignment: &[PhoneSpan], frames: usize) -> Vec<PhoneSpan> {
    alignment
        .iter()
        .filter(|s| s.start_frame < frames)
        .map(|s| PhoneSpan { end_frame: s.end_frame.min(frames), ..s.clone() })
        .collect()
}

/// Frame-level features from a phone alignment over the toy inventory.
/// The transcript must list the non-pause phones of the alignment.
pub fn toy_linguistic_frames(transcript: &str, alignment: &[PhoneSpan], condition: &str) -> Result<LinguisticFrames> {
    let total = check_alignment(alignment)?;
    let spoken: Vec<&str> = alignment.iter().map(|s| s.phone.as_str()).filter(|p| *p != "pau").collect();
    let words: Vec<&str> = transcript.split_whitespace().collect();
    if !words.is_empty() && words != spoken {
        return invalid(format!("transcript {transcript:?} does not match the aligned phones"));
    }
    let code = condition_code(condition)?;
    let mut values = Vec::with_capacity(total * LINGUISTIC_DIMS);
    for s in alignment {
        let idx = PHONES.iter().position(|p| *p == s.phone).ok_or_else(|| Error::InvalidArgument(format!("unknown phone {:?}", s.phone)))?;
        let len = s.end_frame - s.start_frame;
        for f in s.start_frame..s.end_frame {
            let mut row = [0.0; LINGUISTIC_DIMS];
            row[idx] = 1.0;
            row[PHONES.len()] = if len > 1 { (f - s.start_frame) as f64 / (len - 1) as f64 } else { 0.0 };
            row[PHONES.len() + 1] = if total > 1 { f as f64 / (total - 1) as f64 } else { 0.0 };
            row[PHONES.len() + 2] = code;
            values.extend_from_slice(&row);
        }
    }
    Ok(LinguisticFrames {
        values: FeatureMatrix::new(values, total, LINGUISTIC_DIMS, 0.005, FeatureKind::Linguistic)?,
        condition: condition.to_string(),
        condition_code: code,
    })
}

pub fn write_alignment(path: impl AsRef<Path>, alignment: &[PhoneSpan]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in alignment {
        writeln!(f, "{} {} {}", s.phone, s.start_frame, s.end_frame)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_alignment(path: impl AsRef<Path>) -> Result<Vec<PhoneSpan>> {
    let path = path.as_ref();
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Format(format!("{}:{}: expected `phone start end`", path.display(), i + 1));
        if parts.len() != 3 {
            return Err(bad());
        }
        out.push(PhoneSpan {
            phone: parts[0].to_string(),
            start_frame: parts[1].parse().map_err(|_| bad())?,
            end_frame: parts[2].parse().map_err(|_| bad())?,
        });
    }
    check_alignment(&out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArModelConfig {
    pub linguistic_dims: usize,
    pub ff: [usize; 2],
    /// Per direction.
    pub bi_lstm: usize,
    pub uni_lstm: usize,
    pub mel_dims: usize,
    pub feedback_dropout: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for ArModelConfig {
    fn default() -> Self {
        Self {
            linguistic_dims: LINGUISTIC_DIMS,
            ff: [256, 256],
            bi_lstm: 128,
            uni_lstm: 128,
            mel_dims: 80,
            feedback_dropout: 0.25,
            learning_rate: 1e-3,
            iterations: 2000,
            seed: 0,
        }
    }
}

impl ArModelConfig {
    pub fn desk() -> Self {
        Self { ff: [64, 64], bi_lstm: 32, uni_lstm: 32, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.feedback_dropout) {
            return invalid(format!("feedback_dropout must be in [0, 1], got {}", self.feedback_dropout));
        }
        if self.linguistic_dims == 0 || self.mel_dims == 0 || self.ff.contains(&0) || self.bi_lstm == 0 || self.uni_lstm == 0 {
            return invalid(format!("bad AR model config {self:?}"));
        }
        Ok(())
    }
}

/// Which previous frame is fed back.
#[derive(Debug, Clone, Copy)]
pub enum Feedback<'a> {
    /// Natural frames, in the same units as the training targets.
    Teacher(&'a FeatureMatrix),
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArOutput {
    pub mel: FeatureMatrix,
    /// Feedback positions zeroed by dropout, out of `feedback_total`.
    pub feedback_dropped: usize,
    pub feedback_total: usize,
}

pub fn init_acoustic(cfg: &ArModelConfig) -> Result<ParameterSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ps = ParameterSet::new(AR_KIND, cfg)?;
    layers::init_affine(&mut ps, "ff0", cfg.linguistic_dims, cfg.ff[0], &mut rng)?;
    layers::init_affine(&mut ps, "ff1", cfg.ff[0], cfg.ff[1], &mut rng)?;
    layers::init_bilstm(&mut ps, "bi", cfg.ff[1], cfg.bi_lstm, &mut rng)?;
    layers::init_lstm(&mut ps, "uni", 2 * cfg.bi_lstm, cfg.uni_lstm, &mut rng)?;
    ps.insert_uniform("uni.w_fb", &[cfg.mel_dims, 4 * cfg.uni_lstm], cfg.uni_lstm, &mut rng)?;
    layers::init_affine(&mut ps, "out", cfg.uni_lstm + 2 * cfg.bi_lstm, cfg.mel_dims, &mut rng)?;
    ps.set_buffer("mel.mean", Tensor::zeros(&[cfg.mel_dims]));
    ps.set_buffer("mel.std", Tensor::filled(&[cfg.mel_dims], 1.0));
    Ok(ps)
}

struct Masks {
    rows: Vec<Vec<f64>>,
    dropped: usize,
}

fn feedback_masks(frames: usize, dims: usize, rate: f64, seed: u64) -> Masks {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..frames).map(|_| dropout_mask(dims, rate, &mut rng)).collect();
    let dropped = rows.iter().flatten().filter(|v| **v == 0.0).count();
    Masks { rows, dropped }
}

/// Graph for one utterance. `teacher` holds standardized natural frames.
/// Returns standardized predictions `[T, mel]`.
fn build(g: &mut Graph, p: &Bound, cfg: &ArModelConfig, ling: &Tensor, teacher: Option<&Tensor>, masks: &Masks) -> Result<Var> {
    let steps = ling.rows();
    let m = cfg.mel_dims;
    let x = g.constant(ling.clone());
    let h = layers::affine(g, p, "ff0", x)?;
    let h = g.tanh(h);
    let h = layers::affine(g, p, "ff1", h)?;
    let h = g.tanh(h);
    let bi = layers::bilstm(g, p, "bi", h)?;
    let wx = p.get("uni.wx")?;
    let wh = p.get("uni.wh")?;
    let w_fb = p.get("uni.w_fb")?;
    let b = p.get("uni.b")?;
    let proj = g.matmul(bi, wx)?;
    let mut proj = g.add_row(proj, b)?;
    if let Some(t) = teacher {
        let mut fb = vec![0.0; steps * m];
        for s in 1..steps {
            for d in 0..m {
                fb[s * m + d] = t.data()[(s - 1) * m + d] * masks.rows[s][d];
            }
        }
        let fb = g.constant(Tensor::matrix(steps, m, fb)?);
        let fbp = g.matmul(fb, w_fb)?;
        proj = g.add(proj, fbp)?;
    }
    let mut u = g.constant(Tensor::zeros(&[1, cfg.uni_lstm]));
    let mut c = g.constant(Tensor::zeros(&[1, cfg.uni_lstm]));
    let mut outs = Vec::with_capacity(steps);
    let mut us = Vec::with_capacity(steps);
    for s in 0..steps {
        let mut pre = g.slice(proj, 0, s, s + 1)?;
        if teacher.is_none() && s > 0 {
            let prev = *outs.last().expect("previous frame");
            let fb = g.mul_const(prev, Rc::new(masks.rows[s].clone()))?;
            let fbp = g.matmul(fb, w_fb)?;
            pre = g.add(pre, fbp)?;
        }
        (u, c) = layers::lstm_cell(g, pre, u, c, wh)?;
        if teacher.is_none() {
            let bs = g.slice(bi, 0, s, s + 1)?;
            let joined = g.concat(&[u, bs], 1)?;
            outs.push(layers::affine(g, p, "out", joined)?);
        } else {
            us.push(u);
        }
    }
    if teacher.is_some() {
        let uall = g.concat(&us, 0)?;
        let joined = g.concat(&[uall, bi], 1)?;
        layers::affine(g, p, "out", joined)
    } else {
        g.concat(&outs, 0)
    }
}

fn standardize_mel(ps: &ParameterSet, mel: &FeatureMatrix) -> Result<Tensor> {
    let mean = ps.buffer("mel.mean")?.data();
    let std = ps.buffer("mel.std")?.data();
    if mel.dims() != mean.len() {
        return invalid(format!("mel has {} dims, model expects {}", mel.dims(), mean.len()));
    }
    let v = mel.rows().flat_map(|r| r.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s)).collect();
    Tensor::matrix(mel.frames(), mel.dims(), v)
}

fn destandardize_mel(ps: &ParameterSet, t: &Tensor, hop: f64) -> Result<FeatureMatrix> {
    let mean = ps.buffer("mel.mean")?.data();
    let std = ps.buffer("mel.std")?.data();
    let d = mean.len();
    let v = t.data().chunks(d).flat_map(|r| r.iter().zip(mean).zip(std).map(|((v, m), s)| v * s + m)).collect();
    FeatureMatrix::new(v, t.rows(), d, hop, FeatureKind::Mel)
}

fn linguistic_tensor(cfg: &ArModelConfig, l: &LinguisticFrames) -> Result<Tensor> {
    if l.values.dims() != cfg.linguistic_dims {
        return invalid(format!("linguistic frames have {} dims, model expects {}", l.values.dims(), cfg.linguistic_dims));
    }
    if l.frames() == 0 {
        return invalid("no linguistic frames");
    }
    Tensor::matrix(l.frames(), l.values.dims(), l.values.values().to_vec())
}

/// One pass over an utterance. Feedback dropout is drawn from `seed` in
/// both modes; the first frame's feedback is the zero vector.
pub fn ar_forward(l: &LinguisticFrames, feedback: Feedback<'_>, ckpt: &ParameterSet, seed: u64) -> Result<ArOutput> {
    ckpt.expect_kind(AR_KIND)?;
    let cfg: ArModelConfig = ckpt.config()?;
    let ling = linguistic_tensor(&cfg, l)?;
    let teacher = match feedback {
        Feedback::Teacher(mel) => {
            if mel.frames() != l.frames() {
                return invalid(format!("{} reference frames for {} linguistic frames", mel.frames(), l.frames()));
            }
            Some(standardize_mel(ckpt, mel)?)
        }
        Feedback::Free => None,
    };
    let masks = feedback_masks(l.frames(), cfg.mel_dims, cfg.feedback_dropout, seed);
    let mut g = Graph::new();
    let p = ckpt.bind(&mut g, false);
    let out = build(&mut g, &p, &cfg, &ling, teacher.as_ref(), &masks)?;
    Ok(ArOutput {
        mel: destandardize_mel(ckpt, g.value(out), l.values.frame_hop())?,
        feedback_dropped: masks.dropped,
        feedback_total: l.frames() * cfg.mel_dims,
    })
}

/// Free-running generation.
pub fn synthesize_mel(l: &LinguisticFrames, ckpt: &ParameterSet, seed: u64) -> Result<FeatureMatrix> {
    Ok(ar_forward(l, Feedback::Free, ckpt, seed)?.mel)
}

/// Mean absolute error in standardized mel units.
pub fn standardized_l1(ckpt: &ParameterSet, pred: &FeatureMatrix, target: &FeatureMatrix) -> Result<f64> {
    let a = standardize_mel(ckpt, pred)?;
    let b = standardize_mel(ckpt, target)?;
    if a.shape() != b.shape() {
        return invalid("prediction and target shapes differ");
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Root mean squared error in standardized mel units.
pub fn standardized_rmse(ckpt: &ParameterSet, pred: &FeatureMatrix, target: &FeatureMatrix) -> Result<f64> {
    let a = standardize_mel(ckpt, pred)?;
    let b = standardize_mel(ckpt, target)?;
    if a.shape() != b.shape() {
        return invalid("prediction and target shapes differ");
    }
    Ok((a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt())
}

pub fn acoustic_log(ckpt: &ParameterSet) -> Result<Vec<(usize, f64)>> {
    Ok(ckpt.buffer("log")?.data().chunks(2).map(|r| (r[0] as usize, r[1])).collect())
}

/// Teacher-forced training with feedback dropout and frame-wise L1 on
/// standardized mel.
pub fn train_acoustic(corpus: &[(LinguisticFrames, FeatureMatrix)], cfg: &ArModelConfig) -> Result<ParameterSet> {
    if corpus.is_empty() {
        return invalid("empty acoustic training corpus");
    }
    for (i, (l, m)) in corpus.iter().enumerate() {
        if l.frames() != m.frames() {
            return invalid(format!("pair {i}: {} linguistic frames vs {} mel frames", l.frames(), m.frames()));
        }
        if m.dims() != cfg.mel_dims {
            return invalid(format!("pair {i}: mel has {} dims, expected {}", m.dims(), cfg.mel_dims));
        }
    }
    let mut ps = init_acoustic(cfg)?;
    let total: usize = corpus.iter().map(|(_, m)| m.frames()).sum();
    let mut mean = vec![0.0; cfg.mel_dims];
    for (_, m) in corpus {
        for r in m.rows() {
            mean.iter_mut().zip(r).for_each(|(a, v)| *a += v / total as f64);
        }
    }
    let mut var = vec![0.0; cfg.mel_dims];
    for (_, m) in corpus {
        for r in m.rows() {
            var.iter_mut().zip(r).zip(&mean).for_each(|((a, v), mu)| *a += (v - mu).powi(2) / total as f64);
        }
    }
    let std: Vec<f64> = var.into_iter().map(|v| v.sqrt().max(1e-3)).collect();
    ps.set_buffer("mel.mean", Tensor::new(vec![cfg.mel_dims], mean)?);
    ps.set_buffer("mel.std", Tensor::new(vec![cfg.mel_dims], std)?);
    let data: Vec<(Tensor, Tensor)> = corpus
        .iter()
        .map(|(l, m)| Ok((linguistic_tensor(cfg, l)?, standardize_mel(&ps, m)?)))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa5);
    let mut state = RmspropState::new(RmspropConfig::with_lr(cfg.learning_rate));
    let mut log = Vec::with_capacity(cfg.iterations * 2);
    for step in 0..cfg.iterations {
        let (ling, target) = &data[rng.random_range(0..data.len())];
        let masks = feedback_masks(ling.rows(), cfg.mel_dims, cfg.feedback_dropout, rng.random());
        let mut g = Graph::new();
        let p = ps.bind(&mut g, true);
        let pred = build(&mut g, &p, cfg, ling, Some(target), &masks)?;
        let t = g.constant(target.clone());
        let d = g.sub(pred, t)?;
        let d = g.abs(d);
        let loss = g.mean(d);
        let lv = g.value(loss).item();
        check_loss(step, lv)?;
        let grads = g.backward(loss)?;
        let grads = p.gradients(&g, &grads);
        rmsprop_step(&mut ps, &grads, &mut state)?;
        log.extend([step as f64, lv]);
        if step % 200 == 0 {
            log::debug!("acoustic step {step}: l1 {lv:.4}");
        }
    }
    let rows = log.len() / 2;
    ps.set_buffer("log", Tensor::matrix(rows, 2, log)?);
    Ok(ps)
}

/// Gradient check of the full teacher-forced network.
pub fn grad_check_acoustic(cfg: &ArModelConfig, frames: usize, seed: u64) -> Result<f64> {
    let ps = init_acoustic(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ling = Tensor::matrix(frames, cfg.linguistic_dims, (0..frames * cfg.linguistic_dims).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let teacher = Tensor::matrix(frames, cfg.mel_dims, (0..frames * cfg.mel_dims).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let masks = feedback_masks(frames, cfg.mel_dims, cfg.feedback_dropout, seed);
    grad_check(&ps, |g, p| {
        let out = build(g, p, cfg, &ling, Some(&teacher), &masks)?;
        probe_loss(g, out, seed)
    })
}

/// Gradient check through the free-running feedback path.
pub fn grad_check_acoustic_free(cfg: &ArModelConfig, frames: usize, seed: u64) -> Result<f64> {
    let ps = init_acoustic(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ling = Tensor::matrix(frames, cfg.linguistic_dims, (0..frames * cfg.linguistic_dims).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let masks = feedback_masks(frames, cfg.mel_dims, cfg.feedback_dropout, seed);
    grad_check(&ps, |g, p| {
        let out = build(g, p, cfg, &ling, None, &masks)?;
        probe_loss(g, out, seed)
    })
}

/// A small config for gradient checks and fast tests.
pub fn tiny_acoustic_config(mel_dims: usize) -> ArModelConfig {
    ArModelConfig { ff: [6, 6], bi_lstm: 4, uni_lstm: 4, mel_dims, ..ArModelConfig::default() }
}
