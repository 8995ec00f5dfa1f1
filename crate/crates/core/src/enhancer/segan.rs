use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::baseline::baseline_pre_enhance;
use super::chunk::{chunk_stream, concat_stream, ChunkMode, ChunkSpec};
use crate::error::{invalid, Result};
use crate::nn::layers;
use crate::nn::{check_loss, grad_check, probe_loss, rmsprop_step, Bound, ConvSpec, Graph, ParameterSet, RmspropConfig, RmspropState, Tensor, Var};
use crate::signal::Waveform;

pub const SEGAN_KIND: &str = "segan";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeganConfig {
    pub chunk: ChunkSpec,
    pub encoder_channels: Vec<usize>,
    pub kernel: usize,
    pub disc_channels: Vec<usize>,
    pub leak: f64,
    pub residual_skip: bool,
    pub iterations: usize,
    /// Defaults to 10% of `iterations`.
    pub warmup_iterations: Option<usize>,
    pub batch: usize,
    pub lambda_adv: f64,
    pub lambda_l1: f64,
    pub gen_optimizer: RmspropConfig,
    pub disc_optimizer: RmspropConfig,
    pub seed: u64,
}

impl Default for SeganConfig {
    fn default() -> Self {
        Self {
            chunk: ChunkSpec::with_window(1024),
            encoder_channels: vec![8, 16, 16, 32],
            kernel: 15,
            disc_channels: vec![8, 16, 16],
            leak: 0.3,
            residual_skip: true,
            iterations: 400,
            warmup_iterations: None,
            batch: 16,
            lambda_adv: 1.0,
            lambda_l1: 100.0,
            gen_optimizer: RmspropConfig::default(),
            disc_optimizer: RmspropConfig::default(),
            seed: 0,
        }
    }
}

impl SeganConfig {
    pub fn warmup(&self) -> usize {
        self.warmup_iterations.unwrap_or(self.iterations / 10)
    }

    pub fn validate(&self) -> Result<()> {
        self.chunk.validate()?;
        let depth = self.encoder_channels.len();
        if depth == 0 || self.disc_channels.is_empty() {
            return invalid("SEGAN needs at least one encoder and one discriminator layer");
        }
        if self.chunk.window % (1 << depth) != 0 || self.chunk.window >> depth == 0 {
            return invalid(format!("window {} not divisible by 2^{depth}", self.chunk.window));
        }
        if self.kernel % 2 == 0 {
            return invalid(format!("kernel {} must be odd", self.kernel));
        }
        if self.batch == 0 {
            return invalid("batch must be positive");
        }
        Ok(())
    }

    fn spec(&self) -> ConvSpec {
        ConvSpec::same(self.kernel, 2)
    }
}

/// Fresh generator (`g.*`) and discriminator (`d.*`) parameters.
pub fn init_segan(cfg: &SeganConfig) -> Result<ParameterSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ps = ParameterSet::new(SEGAN_KIND, cfg)?;
    let ch = &cfg.encoder_channels;
    let k = cfg.kernel;
    let mut prev = 1;
    for (i, &c) in ch.iter().enumerate() {
        layers::init_conv1d(&mut ps, &format!("g.enc{i}"), prev, c, k, &mut rng)?;
        prev = c;
    }
    // decoder i maps resolution i+1 back to resolution i
    for i in (0..ch.len()).rev() {
        let c_in = if i + 1 == ch.len() { ch[i] } else { 2 * ch[i] };
        let c_out = if i == 0 { 1 } else { ch[i - 1] };
        layers::init_conv_transpose1d(&mut ps, &format!("g.dec{i}"), c_in, c_out, k, &mut rng)?;
    }
    let mut prev = 2;
    for (i, &c) in cfg.disc_channels.iter().enumerate() {
        layers::init_conv1d(&mut ps, &format!("d.conv{i}"), prev, c, k, &mut rng)?;
        prev = c;
    }
    layers::init_affine(&mut ps, "d.out", prev, 1, &mut rng)?;
    Ok(ps)
}

/// `x: [B, 1, W]` to `[B, 1, W]`.
pub fn generator(g: &mut Graph, p: &Bound, cfg: &SeganConfig, x: Var) -> Result<Var> {
    let depth = cfg.encoder_channels.len();
    let mut skips = Vec::with_capacity(depth);
    let mut h = x;
    for i in 0..depth {
        h = layers::conv1d(g, p, &format!("g.enc{i}"), h, cfg.spec())?;
        h = g.leaky_relu(h, cfg.leak);
        skips.push(h);
    }
    let pad = (cfg.kernel - 1) / 2;
    for i in (0..depth).rev() {
        if i + 1 < depth {
            h = g.concat(&[h, skips[i]], 1)?;
        }
        let out_len = 2 * g.shape(h)[2];
        h = layers::conv_transpose1d(g, p, &format!("g.dec{i}"), h, 2, pad, out_len)?;
        if i > 0 {
            h = g.leaky_relu(h, cfg.leak);
        }
    }
    if cfg.residual_skip {
        g.add(x, h)
    } else {
        Ok(h)
    }
}

/// Least-squares critic on `(candidate, noisy)`; returns `[B, 1]`.
pub fn discriminator(g: &mut Graph, p: &Bound, cfg: &SeganConfig, candidate: Var, noisy: Var) -> Result<Var> {
    let mut h = g.concat(&[candidate, noisy], 1)?;
    for i in 0..cfg.disc_channels.len() {
        h = layers::conv1d(g, p, &format!("d.conv{i}"), h, cfg.spec())?;
        h = g.leaky_relu(h, cfg.leak);
    }
    let pooled = g.mean_last(h);
    layers::affine(g, p, "d.out", pooled)
}

fn batch_tensor(chunks: &[&[f64]]) -> Tensor {
    let w = chunks.first().map_or(0, |c| c.len());
    let data = chunks.iter().flat_map(|c| c.iter().copied()).collect();
    Tensor::new(vec![chunks.len(), 1, w], data).expect("uniform chunks")
}

/// Runs the generator over every non-overlapping chunk and stitches the
/// fresh spans back together.
pub fn enhance(wav: &Waveform, ckpt: &ParameterSet) -> Result<Waveform> {
    ckpt.expect_kind(SEGAN_KIND)?;
    let cfg: SeganConfig = ckpt.config()?;
    if wav.is_empty() {
        return Ok(wav.clone());
    }
    let (chunks, map) = chunk_stream(wav.samples(), &cfg.chunk, ChunkMode::Infer)?;
    let mut out = Vec::with_capacity(chunks.len());
    for group in chunks.chunks(32) {
        let mut g = Graph::new();
        let p = ckpt.bind_prefix(&mut g, "g.", false);
        let refs: Vec<&[f64]> = group.iter().map(Vec::as_slice).collect();
        let x = g.constant(batch_tensor(&refs));
        let y = generator(&mut g, &p, &cfg, x)?;
        out.extend(g.value(y).data().chunks(cfg.chunk.window).map(|c| c.iter().map(|v| v.clamp(-1.0, 1.0)).collect()));
    }
    wav.with_samples(concat_stream(&out, &map)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeganLogRow {
    pub step: usize,
    /// 1 while the L1 target is the baseline enhancement, 2 afterwards.
    pub phase: u8,
    pub l1_loss: f64,
    pub adv_loss: f64,
    pub d_loss: f64,
}

pub fn segan_log(ckpt: &ParameterSet) -> Result<Vec<SeganLogRow>> {
    let t = ckpt.buffer("log")?;
    Ok(t.data()
        .chunks(5)
        .map(|r| SeganLogRow { step: r[0] as usize, phase: r[1] as u8, l1_loss: r[2], adv_loss: r[3], d_loss: r[4] })
        .collect())
}

struct Pool {
    noisy: Vec<Vec<f64>>,
    clean: Vec<Vec<f64>>,
    baseline: Vec<Vec<f64>>,
}

fn build_pool(pairs: &[(Waveform, Waveform)], spec: &ChunkSpec) -> Result<Pool> {
    let mut pool = Pool { noisy: Vec::new(), clean: Vec::new(), baseline: Vec::new() };
    for (i, (noisy, clean)) in pairs.iter().enumerate() {
        if noisy.len() != clean.len() || noisy.sample_rate() != clean.sample_rate() {
            return invalid(format!("pair {i}: noisy and clean are not sample-aligned ({} vs {})", noisy.len(), clean.len()));
        }
        let base = baseline_pre_enhance(noisy);
        pool.noisy.extend(chunk_stream(noisy.samples(), spec, ChunkMode::Train)?.0);
        pool.clean.extend(chunk_stream(clean.samples(), spec, ChunkMode::Train)?.0);
        pool.baseline.extend(chunk_stream(base.samples(), spec, ChunkMode::Train)?.0);
    }
    if pool.noisy.is_empty() {
        return invalid("no training chunks");
    }
    Ok(pool)
}

/// Two-phase training: the L1 target is the baseline enhancement of the
/// noisy input for the first `warmup` iterations and the clean signal
/// afterwards, always alongside the least-squares adversarial loss.
pub fn train_segan(pairs: &[(Waveform, Waveform)], cfg: &SeganConfig) -> Result<ParameterSet> {
    let mut ps = init_segan(cfg)?;
    let pool = build_pool(pairs, &cfg.chunk)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e9a);
    let mut gen_state = RmspropState::new(cfg.gen_optimizer);
    let mut disc_state = RmspropState::new(cfg.disc_optimizer);
    let mut order: Vec<usize> = (0..pool.noisy.len()).collect();
    let mut cursor = order.len();
    let mut log = Vec::with_capacity(cfg.iterations);
    for step in 0..cfg.iterations {
        let mut idx = Vec::with_capacity(cfg.batch);
        while idx.len() < cfg.batch.min(order.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let phase = if step < cfg.warmup() { 1 } else { 2 };
        let target_src = if phase == 1 { &pool.baseline } else { &pool.clean };
        let pick = |src: &Vec<Vec<f64>>| batch_tensor(&idx.iter().map(|&i| src[i].as_slice()).collect::<Vec<_>>());
        let (noisy_t, target_t, clean_t) = (pick(&pool.noisy), pick(target_src), pick(&pool.clean));
        let n = noisy_t.len() as f64;

        // generator update against a frozen critic
        let mut g = Graph::new();
        let mut bound = ps.bind_prefix(&mut g, "g.", true);
        bound.extend(ps.bind_prefix(&mut g, "d.", false));
        let noisy = g.constant(noisy_t.clone());
        let target = g.constant(target_t);
        let fake = generator(&mut g, &bound, cfg, noisy)?;
        let diff = g.sub(fake, target)?;
        let abs = g.abs(diff);
        let l1 = g.mean(abs);
        let d_fake = discriminator(&mut g, &bound, cfg, fake, noisy)?;
        let off = g.add_scalar(d_fake, -1.0);
        let sq = g.square(off);
        let adv = g.mean(sq);
        let adv = g.scale(adv, 0.5);
        let wl1 = g.scale(l1, cfg.lambda_l1);
        let wadv = g.scale(adv, cfg.lambda_adv);
        let total = g.add(wl1, wadv)?;
        check_loss(step, g.value(total).item())?;
        let grads = g.backward(total)?;
        let gen_grads = bound.gradients(&g, &grads).into_iter().filter(|(k, _)| k.starts_with("g.")).collect();
        let (l1_v, adv_v) = (g.value(l1).item(), g.value(adv).item());
        let fake_t = g.value(fake).clone();
        rmsprop_step(&mut ps, &gen_grads, &mut gen_state)?;

        // critic update on the same batch
        let mut g = Graph::new();
        let bound = ps.bind_prefix(&mut g, "d.", true);
        let noisy = g.constant(noisy_t);
        let real = g.constant(clean_t);
        let fake = g.constant(fake_t);
        let d_real = discriminator(&mut g, &bound, cfg, real, noisy)?;
        let d_fake = discriminator(&mut g, &bound, cfg, fake, noisy)?;
        let r = g.add_scalar(d_real, -1.0);
        let r = g.square(r);
        let f = g.square(d_fake);
        let both = g.add(r, f)?;
        let d_loss = g.mean(both);
        let d_loss = g.scale(d_loss, 0.5);
        check_loss(step, g.value(d_loss).item())?;
        let grads = g.backward(d_loss)?;
        rmsprop_step(&mut ps, &bound.gradients(&g, &grads), &mut disc_state)?;
        let d_v = g.value(d_loss).item();

        log.push(SeganLogRow { step, phase, l1_loss: l1_v, adv_loss: adv_v, d_loss: d_v });
        if step % 50 == 0 {
            log::debug!("segan step {step} phase {phase} l1 {l1_v:.5} adv {adv_v:.4} d {d_v:.4} (batch {n})");
        }
    }
    ps.set_step(cfg.iterations as u64);
    let flat = log.iter().flat_map(|r| [r.step as f64, f64::from(r.phase), r.l1_loss, r.adv_loss, r.d_loss]).collect();
    ps.set_buffer("log", Tensor::matrix(log.len(), 5, flat)?);
    Ok(ps)
}

/// Zeroes the last decoder layer, making the generator the identity.
pub fn zero_final_layer(ps: &mut ParameterSet) -> Result<()> {
    for name in ["g.dec0.w", "g.dec0.b"] {
        let n = ps.get(name)?.len();
        ps.set_values(name, vec![0.0; n])?;
    }
    Ok(())
}

/// Finite-difference check over generator and discriminator jointly.
pub fn grad_check_segan(cfg: &SeganConfig, seed: u64) -> Result<f64> {
    let ps = init_segan(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = cfg.chunk.window;
    let x: Vec<f64> = (0..2 * w).map(|_| rng.random_range(-0.5..0.5)).collect();
    let clean = Tensor::new(vec![2, 1, w], x.iter().map(|v| 0.8 * v).collect())?;
    let x = Tensor::new(vec![2, 1, w], x)?;
    grad_check(&ps, |g, p| {
        let noisy = g.constant(x.clone());
        let real = g.constant(clean.clone());
        let fake = generator(g, p, cfg, noisy)?;
        let df = discriminator(g, p, cfg, fake, noisy)?;
        let dr = discriminator(g, p, cfg, real, noisy)?;
        let a = probe_loss(g, fake, seed)?;
        let b = g.square(df);
        let b = g.sum(b);
        let c = g.add(a, b)?;
        let d = g.sum(dr);
        g.add(c, d)
    })
}

/// A configuration with fewer than 5k parameters for gradient checks.
pub fn tiny_segan_config() -> SeganConfig {
    SeganConfig { chunk: ChunkSpec::with_window(32), encoder_channels: vec![3, 4, 6], kernel: 5, disc_channels: vec![3, 4], ..SeganConfig::default() }
}

