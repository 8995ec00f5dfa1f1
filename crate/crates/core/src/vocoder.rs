//! WaveNet vocoder over mu-law classes, conditioned on mel frames plus a
//! condition code.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::layers;
use crate::nn::{sigmoid, softmax_in_place, check_loss, grad_check, probe_loss, rmsprop_step, Bound, Graph, ParameterSet, RmspropConfig, RmspropState, Tensor, Var};
use crate::signal::{mel_spectrogram, FeatureMatrix, MelConfig, MuLaw, Waveform};

pub const WAVENET_KIND: &str = "wavenet";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveNetConfig {
    pub sample_rate: u32,
    pub bits: u32,
    pub blocks: usize,
    pub residual_channels: usize,
    pub gate_channels: usize,
    pub skip_channels: usize,
    /// Per direction.
    pub cond_lstm: usize,
    pub cond_channels: usize,
    pub mel: MelConfig,
    /// Samples scored per training step.
    pub segment: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for WaveNetConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            bits: 8,
            blocks: 10,
            residual_channels: 16,
            gate_channels: 16,
            skip_channels: 32,
            cond_lstm: 16,
            cond_channels: 16,
            mel: MelConfig::for_rate(8000),
            segment: 2048,
            learning_rate: 1e-3,
            iterations: 1000,
            seed: 0,
        }
    }
}

impl WaveNetConfig {
    /// 16 kHz, 10-bit, 40 blocks.
    pub fn full_scale() -> Self {
        Self {
            sample_rate: 16000,
            bits: 10,
            blocks: 40,
            residual_channels: 64,
            gate_channels: 64,
            skip_channels: 128,
            cond_lstm: 64,
            cond_channels: 64,
            mel: MelConfig::for_rate(16000),
            segment: 4096,
            iterations: 100_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        MuLaw::new(self.bits)?;
        self.mel.validate(self.sample_rate)?;
        let widths = [self.residual_channels, self.gate_channels, self.skip_channels, self.cond_lstm, self.cond_channels, self.segment];
        if self.blocks == 0 || widths.contains(&0) {
            return invalid(format!("bad WaveNet config {self:?}"));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        1 << self.bits
    }

    pub fn dilations(&self) -> Vec<usize> {
        (0..self.blocks).map(|k| 1 << (k % 10)).collect()
    }

    pub fn cond_input_dims(&self) -> usize {
        self.mel.bands + 1
    }

    fn mulaw(&self) -> MuLaw {
        MuLaw::new(self.bits).expect("validated")
    }

    fn zero_class(&self) -> usize {
        self.mulaw().encode_sample(0.0) as usize
    }
}

/// Samples influencing one output, for kernel size 2.
pub fn receptive_field(cfg: &WaveNetConfig) -> usize {
    1 + cfg.dilations().iter().sum::<usize>()
}

/// Waveform length whose mel analysis yields exactly `frames` frames.
pub fn samples_for_frames(cfg: &WaveNetConfig, frames: usize) -> usize {
    (frames.max(1) - 1) * cfg.mel.hop + cfg.mel.window
}

/// Per-sample conditioning vectors at the waveform rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningTrack {
    values: Tensor,
    sample_rate: u32,
}

impl ConditioningTrack {
    /// Wraps a `[samples, channels]` matrix.
    pub fn from_values(values: Tensor, sample_rate: u32) -> Result<Self> {
        if values.shape().len() != 2 {
            return invalid(format!("conditioning must be a matrix, got shape {:?}", values.shape()));
        }
        Ok(Self { values, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let c = self.dims();
        &self.values.data()[t * c..(t + 1) * c]
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }
}

pub fn init_wavenet(cfg: &WaveNetConfig) -> Result<ParameterSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ps = ParameterSet::new(WAVENET_KIND, cfg)?;
    let (r, gc, s, c) = (cfg.residual_channels, cfg.gate_channels, cfg.skip_channels, cfg.cond_channels);
    ps.insert_uniform("embed", &[cfg.classes(), r], r, &mut rng)?;
    layers::init_bilstm(&mut ps, "cond.bi", cfg.cond_input_dims(), cfg.cond_lstm, &mut rng)?;
    for tap in 0..3 {
        ps.insert_uniform(format!("cond.conv.w{tap}"), &[2 * cfg.cond_lstm, c], 6 * cfg.cond_lstm, &mut rng)?;
    }
    ps.insert_filled("cond.conv.b", &[c], 0.0)?;
    for k in 0..cfg.blocks {
        layers::init_affine(&mut ps, &format!("b{k}.cur"), r, 2 * gc, &mut rng)?;
        ps.insert_uniform(format!("b{k}.past.w"), &[r, 2 * gc], r, &mut rng)?;
        ps.insert_uniform(format!("b{k}.cond.w"), &[c, 2 * gc], c, &mut rng)?;
        layers::init_affine(&mut ps, &format!("b{k}.res"), gc, r, &mut rng)?;
        layers::init_affine(&mut ps, &format!("b{k}.skip"), gc, s, &mut rng)?;
    }
    layers::init_affine(&mut ps, "post1", s, s, &mut rng)?;
    layers::init_affine(&mut ps, "post2", s, cfg.classes(), &mut rng)?;
    Ok(ps)
}

/// Bi-LSTM then a centred kernel-3 convolution over frames.
fn encoder_graph(g: &mut Graph, p: &Bound, frames: &Tensor) -> Result<Var> {
    let x = g.constant(frames.clone());
    let bi = layers::bilstm(g, p, "cond.bi", x)?;
    let n = g.shape(bi)[0];
    let width = g.shape(bi)[1];
    let prev = g.shift_rows(bi, 1);
    let next = if n > 1 {
        let tail = g.slice(bi, 0, 1, n)?;
        let pad = g.constant(Tensor::zeros(&[1, width]));
        g.concat(&[tail, pad], 0)?
    } else {
        g.constant(Tensor::zeros(&[1, width]))
    };
    let mut y = g.matmul(prev, p.get("cond.conv.w0")?)?;
    let mid = g.matmul(bi, p.get("cond.conv.w1")?)?;
    y = g.add(y, mid)?;
    let fut = g.matmul(next, p.get("cond.conv.w2")?)?;
    y = g.add(y, fut)?;
    g.add_row(y, p.get("cond.conv.b")?)
}

fn encoder_input(cfg: &WaveNetConfig, feat: &FeatureMatrix, condition_code: f64) -> Result<Tensor> {
    if feat.frames() == 0 {
        return invalid("conditioning needs at least one frame");
    }
    if feat.dims() != cfg.mel.bands {
        return invalid(format!("conditioning frames have {} dims, model expects {}", feat.dims(), cfg.mel.bands));
    }
    let d = cfg.cond_input_dims();
    let v = feat.rows().flat_map(|r| r.iter().copied().chain(std::iter::once(condition_code))).collect();
    Tensor::matrix(feat.frames(), d, v)
}

/// Nearest analysis frame for every sample.
fn upsample_ids(cfg: &WaveNetConfig, frames: usize, target_len: usize) -> Result<Vec<usize>> {
    let expect = cfg.mel.frame_count(target_len);
    if frames.abs_diff(expect) > 1 {
        return invalid(format!("{frames} frames cannot condition {target_len} samples (expected about {expect})"));
    }
    let (hop, half) = (cfg.mel.hop as f64, cfg.mel.window as f64 / 2.0);
    Ok((0..target_len).map(|s| ((s as f64 - half) / hop).round().clamp(0.0, (frames - 1) as f64) as usize).collect())
}

pub fn encode_conditioning(feat: &FeatureMatrix, condition_code: f64, target_len: usize, ckpt: &ParameterSet) -> Result<ConditioningTrack> {
    ckpt.expect_kind(WAVENET_KIND)?;
    let cfg: WaveNetConfig = ckpt.config()?;
    let input = encoder_input(&cfg, feat, condition_code)?;
    let ids = upsample_ids(&cfg, feat.frames(), target_len)?;
    let mut g = Graph::new();
    let p = ckpt.bind_prefix(&mut g, "cond.", false);
    let enc = encoder_graph(&mut g, &p, &input)?;
    let track = g.embedding(enc, Rc::new(ids))?;
    Ok(ConditioningTrack { values: g.value(track).clone(), sample_rate: cfg.sample_rate })
}

/// Logits `[T, classes]` where row `t` predicts sample `t` from the samples
/// before it. `inputs[t]` is the class of sample `t - 1`.
fn wavenet_graph(g: &mut Graph, p: &Bound, cfg: &WaveNetConfig, inputs: &[usize], cond: Var) -> Result<Var> {
    let mut h = g.embedding(p.get("embed")?, Rc::new(inputs.to_vec()))?;
    let mut skip: Option<Var> = None;
    for (k, d) in cfg.dilations().into_iter().enumerate() {
        let cur = layers::affine(g, p, &format!("b{k}.cur"), h)?;
        let past = g.shift_rows(h, d);
        let past = g.matmul(past, p.get(&format!("b{k}.past.w"))?)?;
        let cz = g.matmul(cond, p.get(&format!("b{k}.cond.w"))?)?;
        let a = g.add(cur, past)?;
        let a = g.add(a, cz)?;
        let z = layers::gated(g, a)?;
        let res = layers::affine(g, p, &format!("b{k}.res"), z)?;
        h = g.add(h, res)?;
        let s = layers::affine(g, p, &format!("b{k}.skip"), z)?;
        skip = Some(match skip {
            Some(acc) => g.add(acc, s)?,
            None => s,
        });
    }
    let s = g.relu(skip.expect("at least one block"));
    let s = layers::affine(g, p, "post1", s)?;
    let s = g.relu(s);
    layers::affine(g, p, "post2", s)
}

fn shifted_inputs(cfg: &WaveNetConfig, classes: &[u32], start: usize, end: usize) -> Vec<usize> {
    (start..end).map(|t| if t == 0 { cfg.zero_class() } else { classes[t - 1] as usize }).collect()
}

/// Teacher-forced logits for every position of `classes`.
fn teacher_logits(ckpt: &ParameterSet, cfg: &WaveNetConfig, classes: &[u32], cond: &ConditioningTrack) -> Result<Tensor> {
    if cond.len() < classes.len() {
        return invalid(format!("conditioning has {} samples for {} positions", cond.len(), classes.len()));
    }
    let mut g = Graph::new();
    let p = ckpt.bind(&mut g, false);
    let c = g.constant(Tensor::matrix(classes.len(), cond.dims(), cond.values.data()[..classes.len() * cond.dims()].to_vec())?);
    let out = wavenet_graph(&mut g, &p, cfg, &shifted_inputs(cfg, classes, 0, classes.len()), c)?;
    Ok(g.value(out).clone())
}

/// Logits of every position in one full causal pass.
pub fn teacher_forced_logits(classes: &[u32], cond: &ConditioningTrack, ckpt: &ParameterSet) -> Result<Tensor> {
    ckpt.expect_kind(WAVENET_KIND)?;
    let cfg: WaveNetConfig = ckpt.config()?;
    if cond.dims() != cfg.cond_channels {
        return invalid(format!("conditioning has {} channels, model expects {}", cond.dims(), cfg.cond_channels));
    }
    teacher_logits(ckpt, &cfg, classes, cond)
}

/// Distribution of sample `history.len()` given the quantized history.
pub fn next_sample_distribution(history: &[u32], cond: &ConditioningTrack, ckpt: &ParameterSet) -> Result<Vec<f64>> {
    ckpt.expect_kind(WAVENET_KIND)?;
    let cfg: WaveNetConfig = ckpt.config()?;
    if let Some(bad) = history.iter().find(|&&c| c as usize >= cfg.classes()) {
        return invalid(format!("class {bad} outside the model's {} classes", cfg.classes()));
    }
    let pos = history.len();
    if cond.len() <= pos {
        return invalid(format!("conditioning has {} samples, position {pos} requested", cond.len()));
    }
    let start = (pos + 1).saturating_sub(receptive_field(&cfg));
    let inputs = shifted_inputs(&cfg, history, start, pos + 1);
    let mut g = Graph::new();
    let p = ckpt.bind(&mut g, false);
    let c = g.constant(Tensor::matrix(inputs.len(), cond.dims(), cond.values.data()[start * cond.dims()..(pos + 1) * cond.dims()].to_vec())?);
    let out = wavenet_graph(&mut g, &p, &cfg, &inputs, c)?;
    let logits = g.value(out);
    let k = cfg.classes();
    let mut probs = logits.data()[(inputs.len() - 1) * k..].to_vec();
    softmax_in_place(&mut probs);
    Ok(probs)
}

/// Top-1 next-sample accuracy under teacher forcing.
pub fn teacher_forced_accuracy(wav: &Waveform, mel: &FeatureMatrix, condition_code: f64, ckpt: &ParameterSet) -> Result<f64> {
    ckpt.expect_kind(WAVENET_KIND)?;
    let cfg: WaveNetConfig = ckpt.config()?;
    let classes = cfg.mulaw().encode(wav.samples()).indices;
    let cond = encode_conditioning(mel, condition_code, wav.len(), ckpt)?;
    let logits = teacher_logits(ckpt, &cfg, &classes, &cond)?;
    let k = cfg.classes();
    let hits = logits.data().chunks(k).zip(&classes).filter(|(row, &y)| argmax(row) == y as usize).count();
    Ok(hits as f64 / classes.len().max(1) as f64)
}

fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best }).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    Sample,
    Argmax,
}

impl std::str::FromStr for GenerationMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(Self::Sample),
            "argmax" => Ok(Self::Argmax),
            _ => invalid(format!("mode must be sample or argmax, got {s:?}")),
        }
    }
}

/// `y = x W + b` on plain slices.
fn affine_into(x: &[f64], w: &Tensor, b: Option<&Tensor>, out: &mut [f64], accumulate: bool) {
    let n = w.cols();
    if !accumulate {
        match b {
            Some(b) => out.copy_from_slice(b.data()),
            None => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            let row = &w.data()[i * n..(i + 1) * n];
            out.iter_mut().zip(row).for_each(|(o, wv)| *o += xi * wv);
        }
    }
}

struct BlockWeights<'a> {
    dilation: usize,
    cur_w: &'a Tensor,
    cur_b: &'a Tensor,
    past_w: &'a Tensor,
    cond_w: &'a Tensor,
    res_w: &'a Tensor,
    res_b: &'a Tensor,
    skip_w: &'a Tensor,
    skip_b: &'a Tensor,
}

/// Autoregressive generation with a per-block ring buffer of past inputs.
pub fn generate(cond: &ConditioningTrack, ckpt: &ParameterSet, seed: u64, mode: GenerationMode) -> Result<Waveform> {
    ckpt.expect_kind(WAVENET_KIND)?;
    let cfg: WaveNetConfig = ckpt.config()?;
    if cond.dims() != cfg.cond_channels {
        return invalid(format!("conditioning has {} channels, model expects {}", cond.dims(), cfg.cond_channels));
    }
    let blocks: Vec<BlockWeights> = cfg
        .dilations()
        .into_iter()
        .enumerate()
        .map(|(k, dilation)| {
            Ok(BlockWeights {
                dilation,
                cur_w: ckpt.get(&format!("b{k}.cur.w"))?,
                cur_b: ckpt.get(&format!("b{k}.cur.b"))?,
                past_w: ckpt.get(&format!("b{k}.past.w"))?,
                cond_w: ckpt.get(&format!("b{k}.cond.w"))?,
                res_w: ckpt.get(&format!("b{k}.res.w"))?,
                res_b: ckpt.get(&format!("b{k}.res.b"))?,
                skip_w: ckpt.get(&format!("b{k}.skip.w"))?,
                skip_b: ckpt.get(&format!("b{k}.skip.b"))?,
            })
        })
        .collect::<Result<_>>()?;
    let embed = ckpt.get("embed")?;
    let (post1_w, post1_b) = (ckpt.get("post1.w")?, ckpt.get("post1.b")?);
    let (post2_w, post2_b) = (ckpt.get("post2.w")?, ckpt.get("post2.b")?);
    let (r, gc, s, k) = (cfg.residual_channels, cfg.gate_channels, cfg.skip_channels, cfg.classes());
    let mut rings: Vec<Vec<f64>> = blocks.iter().map(|b| vec![0.0; b.dilation * r]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mulaw = cfg.mulaw();
    let mut prev = cfg.zero_class();
    let mut out = Vec::with_capacity(cond.len());
    let (mut a, mut z, mut skip, mut tmp, mut hidden, mut logits) = (vec![0.0; 2 * gc], vec![0.0; gc], vec![0.0; s], vec![0.0; r], vec![0.0; s], vec![0.0; k]);
    for t in 0..cond.len() {
        let mut h = embed.data()[prev * r..(prev + 1) * r].to_vec();
        skip.iter_mut().for_each(|v| *v = 0.0);
        for (b, ring) in blocks.iter().zip(rings.iter_mut()) {
            let slot = (t % b.dilation) * r;
            affine_into(&h, b.cur_w, Some(b.cur_b), &mut a, false);
            affine_into(&ring[slot..slot + r], b.past_w, None, &mut a, true);
            affine_into(cond.row(t), b.cond_w, None, &mut a, true);
            for i in 0..gc {
                z[i] = a[i].tanh() * sigmoid(a[gc + i]);
            }
            ring[slot..slot + r].copy_from_slice(&h);
            affine_into(&z, b.res_w, Some(b.res_b), &mut tmp, false);
            h.iter_mut().zip(&tmp).for_each(|(hv, d)| *hv += d);
            affine_into(&z, b.skip_w, Some(b.skip_b), &mut skip, true);
            skip.iter_mut().zip(b.skip_b.data()).for_each(|(v, bb)| *v += bb);
        }
        skip.iter_mut().for_each(|v| *v = v.max(0.0));
        affine_into(&skip, post1_w, Some(post1_b), &mut hidden, false);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        affine_into(&hidden, post2_w, Some(post2_b), &mut logits, false);
        let class = match mode {
            GenerationMode::Argmax => argmax(&logits),
            GenerationMode::Sample => {
                softmax_in_place(&mut logits);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                logits.iter().position(|p| {
                    acc += p;
                    acc > u
                })
                .unwrap_or(k - 1)
            }
        };
        out.push(mulaw.decode_sample(class as u32));
        prev = class;
    }
    Waveform::new(out, cfg.sample_rate)
}

/// Mel analysis of `wav`, then conditioning and argmax generation.
pub fn copy_synthesis(wav: &Waveform, condition_code: f64, ckpt: &ParameterSet) -> Result<Waveform> {
    ckpt.expect_kind(WAVENET_KIND)?;
    let cfg: WaveNetConfig = ckpt.config()?;
    if wav.sample_rate() != cfg.sample_rate {
        return invalid(format!("vocoder runs at {} Hz, input is {} Hz", cfg.sample_rate, wav.sample_rate()));
    }
    let mel = mel_spectrogram(wav, &cfg.mel)?;
    let cond = encode_conditioning(&mel, condition_code, wav.len(), ckpt)?;
    generate(&cond, ckpt, 0, GenerationMode::Argmax)
}

/// One training utterance.
#[derive(Debug, Clone)]
pub struct VocoderExample {
    pub wav: Waveform,
    pub mel: FeatureMatrix,
    pub condition_code: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocoderLogRow {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn vocoder_log(ckpt: &ParameterSet) -> Result<Vec<VocoderLogRow>> {
    Ok(ckpt.buffer("log")?.data().chunks(3).map(|r| VocoderLogRow { step: r[0] as usize, loss: r[1], accuracy: r[2] }).collect())
}

/// Teacher-forced cross-entropy on random excerpts, each scored with a full
/// receptive field of context.
pub fn train_vocoder(corpus: &[VocoderExample], cfg: &WaveNetConfig) -> Result<ParameterSet> {
    if corpus.is_empty() {
        return invalid("empty vocoder training corpus");
    }
    let mut ps = init_wavenet(cfg)?;
    let mulaw = cfg.mulaw();
    let mut prepared = Vec::with_capacity(corpus.len());
    for (i, ex) in corpus.iter().enumerate() {
        if ex.wav.sample_rate() != cfg.sample_rate {
            return invalid(format!("example {i}: {} Hz, vocoder runs at {} Hz", ex.wav.sample_rate(), cfg.sample_rate));
        }
        let input = encoder_input(cfg, &ex.mel, ex.condition_code)?;
        let ids = upsample_ids(cfg, ex.mel.frames(), ex.wav.len())?;
        prepared.push((input, ids, mulaw.encode(ex.wav.samples()).indices));
    }
    let rf = receptive_field(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x3a7e);
    let mut state = RmspropState::new(RmspropConfig::with_lr(cfg.learning_rate));
    let mut log = Vec::with_capacity(cfg.iterations * 3);
    let k = cfg.classes();
    for step in 0..cfg.iterations {
        let (input, ids, classes) = &prepared[rng.random_range(0..prepared.len())];
        let len = classes.len();
        let seg = cfg.segment.min(len);
        let s0 = rng.random_range(0..=len - seg);
        let w0 = s0.saturating_sub(rf - 1);
        let end = s0 + seg;
        let mut g = Graph::new();
        let p = ps.bind(&mut g, true);
        let enc = encoder_graph(&mut g, &p, input)?;
        let cond = g.embedding(enc, Rc::new(ids[w0..end].to_vec()))?;
        let logits = wavenet_graph(&mut g, &p, cfg, &shifted_inputs(cfg, classes, w0, end), cond)?;
        let logits = g.slice(logits, 0, s0 - w0, end - w0)?;
        let targets: Vec<usize> = classes[s0..end].iter().map(|&c| c as usize).collect();
        let hits = g.value(logits).data().chunks(k).zip(&targets).filter(|(row, &y)| argmax(row) == y).count();
        let loss = g.softmax_cross_entropy(logits, Rc::new(targets))?;
        let lv = g.value(loss).item();
        check_loss(step, lv)?;
        let grads = g.backward(loss)?;
        let grads = p.gradients(&g, &grads);
        rmsprop_step(&mut ps, &grads, &mut state)?;
        let acc = hits as f64 / seg as f64;
        log.extend([step as f64, lv, acc]);
        if step % 100 == 0 {
            log::debug!("vocoder step {step}: ce {lv:.4} acc {acc:.3}");
        }
    }
    let rows = log.len() / 3;
    ps.set_buffer("log", Tensor::matrix(rows, 3, log)?);
    Ok(ps)
}

/// Gradient check of encoder and blocks on a short random excerpt.
pub fn grad_check_wavenet(cfg: &WaveNetConfig, samples: usize, seed: u64) -> Result<f64> {
    let mut ps = init_wavenet(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    jitter_biases(&mut ps, &mut rng)?;
    let classes: Vec<u32> = (0..samples).map(|_| rng.random_range(0..cfg.classes() as u32)).collect();
    let frames = cfg.mel.frame_count(samples).max(1);
    let input = Tensor::matrix(frames, cfg.cond_input_dims(), (0..frames * cfg.cond_input_dims()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let ids = upsample_ids(cfg, frames, samples)?;
    let targets: Vec<usize> = classes.iter().map(|&c| c as usize).collect();
    grad_check(&ps, |g, p| {
        let enc = encoder_graph(g, p, &input)?;
        let cond = g.embedding(enc, Rc::new(ids.clone()))?;
        let logits = wavenet_graph(g, p, cfg, &shifted_inputs(cfg, &classes, 0, samples), cond)?;
        let ce = g.softmax_cross_entropy(logits, Rc::new(targets.clone()))?;
        let pr = probe_loss(g, logits, seed)?;
        let pr = g.scale(pr, 0.01);
        g.add(ce, pr)
    })
}

/// Random biases keep ReLU inputs away from exact zero.
pub fn jitter_biases(ps: &mut ParameterSet, rng: &mut ChaCha8Rng) -> Result<()> {
    let names: Vec<String> = ps.trainable().map(|(k, _)| k.to_string()).filter(|k| k.ends_with(".b")).collect();
    for name in names {
        let n = ps.get(&name)?.len();
        ps.set_values(&name, (0..n).map(|_| rng.random_range(-0.5..0.5)).collect())?;
    }
    Ok(())
}

pub fn tiny_wavenet_config(blocks: usize) -> WaveNetConfig {
    let mel = MelConfig { bands: 3, fft_size: 16, window: 8, hop: 4, fmin: 0.0, fmax: 4000.0, ..MelConfig::for_rate(8000) };
    WaveNetConfig {
        bits: 3,
        blocks,
        residual_channels: 3,
        gate_channels: 2,
        skip_channels: 3,
        cond_lstm: 2,
        cond_channels: 2,
        mel,
        segment: 16,
        ..WaveNetConfig::default()
    }
}

#[cfg(test)]
mod tests;
