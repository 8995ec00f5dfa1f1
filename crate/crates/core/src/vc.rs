//! Frame-wise CycleGAN voice conversion over mel + delta features.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusManifest;
use crate::error::{invalid, Result};
use crate::nn::layers::{self, BatchNormMode};
use crate::nn::{check_loss, grad_check, probe_loss, rmsprop_step, Bound, Graph, ParameterSet, RmspropConfig, RmspropState, Tensor, Var};
use crate::signal::FeatureMatrix;

pub const CYCLEGAN_KIND: &str = "cyclegan";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CycleGanConfig {
    pub dims: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub gen_batch: usize,
    pub disc_batch: usize,
    pub gen_lr: f64,
    pub disc_lr: f64,
    pub lambda_cyc: f64,
    pub lambda_adv: f64,
    /// Generators predict a correction added to their input.
    pub residual: bool,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for CycleGanConfig {
    fn default() -> Self {
        Self {
            dims: 240,
            gen_hidden: vec![256, 512, 512, 256],
            disc_hidden: vec![256, 512, 512, 256],
            gen_batch: 128,
            disc_batch: 4096,
            gen_lr: 1e-3,
            disc_lr: 1e-4,
            lambda_cyc: 10.0,
            lambda_adv: 1.0,
            residual: true,
            iterations: 2000,
            seed: 0,
        }
    }
}

impl CycleGanConfig {
    /// Narrower networks and smaller batches for single-core runs.
    pub fn desk() -> Self {
        Self { gen_hidden: vec![32, 64, 64, 32], disc_hidden: vec![32, 64, 64, 32], disc_batch: 256, iterations: 3000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 || self.gen_hidden.is_empty() || self.disc_hidden.is_empty() || self.gen_batch < 2 || self.disc_batch == 0 {
            return invalid(format!("bad CycleGAN config {self:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversionDirection {
    /// Source to target, through `G`.
    Forward,
    /// Target to source, through `F`.
    Backward,
}

impl std::str::FromStr for ConversionDirection {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Self::Forward),
            "backward" => Ok(Self::Backward),
            _ => invalid(format!("direction must be forward or backward, got {s:?}")),
        }
    }
}

fn init_generator(ps: &mut ParameterSet, prefix: &str, cfg: &CycleGanConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut prev = cfg.dims;
    for (i, &h) in cfg.gen_hidden.iter().enumerate() {
        layers::init_affine(ps, &format!("{prefix}.h{i}"), prev, h, rng)?;
        layers::init_batch_norm(ps, &format!("{prefix}.bn{i}"), h)?;
        prev = h;
    }
    layers::init_affine(ps, &format!("{prefix}.out"), prev, cfg.dims, rng)
}

/// Glorot uniform scaled by 4, the usual choice for sigmoid layers.
fn init_sigmoid_affine(ps: &mut ParameterSet, prefix: &str, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    let bound = 4.0 * (6.0 / (inputs + outputs) as f64).sqrt();
    let w = (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect();
    ps.insert(format!("{prefix}.w"), Tensor::matrix(inputs, outputs, w)?)?;
    ps.insert_filled(format!("{prefix}.b"), &[outputs], 0.0)
}

fn init_discriminator(ps: &mut ParameterSet, prefix: &str, cfg: &CycleGanConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut prev = cfg.dims;
    for (i, &h) in cfg.disc_hidden.iter().enumerate() {
        init_sigmoid_affine(ps, &format!("{prefix}.h{i}"), prev, h, rng)?;
        prev = h;
    }
    layers::init_affine(ps, &format!("{prefix}.out"), prev, 1, rng)
}

/// Generators `g` (X to Y) and `f` (Y to X), critics `dx` and `dy`, and
/// identity standardization buffers.
pub fn init_cyclegan(cfg: &CycleGanConfig) -> Result<ParameterSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ps = ParameterSet::new(CYCLEGAN_KIND, cfg)?;
    init_generator(&mut ps, "g", cfg, &mut rng)?;
    init_generator(&mut ps, "f", cfg, &mut rng)?;
    init_discriminator(&mut ps, "dx", cfg, &mut rng)?;
    init_discriminator(&mut ps, "dy", cfg, &mut rng)?;
    for side in ["source", "target"] {
        ps.set_buffer(&format!("norm.{side}.mean"), Tensor::zeros(&[cfg.dims]));
        ps.set_buffer(&format!("norm.{side}.std"), Tensor::filled(&[cfg.dims], 1.0));
    }
    Ok(ps)
}

/// Batch-normalized sigmoid MLP with a linear output. Returns the output and
/// the batch-norm nodes (for running-statistic updates).
pub fn generator_forward(
    g: &mut Graph,
    p: &Bound,
    ps: &ParameterSet,
    cfg: &CycleGanConfig,
    prefix: &str,
    x: Var,
    mode: BatchNormMode,
) -> Result<(Var, Vec<Var>)> {
    let mut h = x;
    let mut bns = Vec::new();
    for i in 0..cfg.gen_hidden.len() {
        h = layers::affine(g, p, &format!("{prefix}.h{i}"), h)?;
        h = layers::batch_norm(g, p, ps, &format!("{prefix}.bn{i}"), h, mode)?;
        bns.push(h);
        h = g.sigmoid(h);
    }
    let out = layers::affine(g, p, &format!("{prefix}.out"), h)?;
    let y = if cfg.residual { g.add(x, out)? } else { out };
    Ok((y, bns))
}

pub fn discriminator_forward(g: &mut Graph, p: &Bound, cfg: &CycleGanConfig, prefix: &str, x: Var) -> Result<Var> {
    let mut h = x;
    for i in 0..cfg.disc_hidden.len() {
        h = layers::affine(g, p, &format!("{prefix}.h{i}"), h)?;
        h = g.sigmoid(h);
    }
    layers::affine(g, p, &format!("{prefix}.out"), h)
}

/// Mean over frames of the per-frame L1 norm.
fn mean_frame_l1(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let frames = g.shape(a)[0] as f64;
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    let s = g.sum(d);
    Ok(g.scale(s, 1.0 / frames))
}

fn lsgan_to(g: &mut Graph, score: Var, target: f64) -> Var {
    let d = g.add_scalar(score, -target);
    let d = g.square(d);
    g.mean(d)
}

fn standardize(ps: &ParameterSet, side: &str, feat: &FeatureMatrix) -> Result<Tensor> {
    let mean = ps.buffer(&format!("norm.{side}.mean"))?.data();
    let std = ps.buffer(&format!("norm.{side}.std"))?.data();
    if feat.dims() != mean.len() {
        return invalid(format!("features have {} dims, model expects {}", feat.dims(), mean.len()));
    }
    let data = feat.rows().flat_map(|r| r.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s)).collect();
    Tensor::matrix(feat.frames(), feat.dims(), data)
}

fn destandardize(ps: &ParameterSet, side: &str, t: &Tensor, template: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mean = ps.buffer(&format!("norm.{side}.mean"))?.data();
    let std = ps.buffer(&format!("norm.{side}.std"))?.data();
    let d = mean.len();
    let values = t.data().chunks(d).flat_map(|r| r.iter().zip(mean).zip(std).map(|((v, m), s)| v * s + m)).collect();
    FeatureMatrix::new(values, template.frames(), d, template.frame_hop(), template.kind())
}

/// Cycle-consistency loss with each side in its own standardized units and
/// generators in inference mode.
pub fn cycle_loss(ckpt: &ParameterSet, x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64> {
    ckpt.expect_kind(CYCLEGAN_KIND)?;
    let cfg: CycleGanConfig = ckpt.config()?;
    let (tx, ty) = (standardize(ckpt, "source", x)?, standardize(ckpt, "target", y)?);
    let mut g = Graph::new();
    let p = ckpt.bind(&mut g, false);
    let xv = g.constant(tx);
    let yv = g.constant(ty);
    let l = cycle_terms(&mut g, &p, ckpt, &cfg, xv, yv, BatchNormMode::Infer)?;
    Ok(g.value(l).item())
}

fn cycle_terms(g: &mut Graph, p: &Bound, ps: &ParameterSet, cfg: &CycleGanConfig, x: Var, y: Var, mode: BatchNormMode) -> Result<Var> {
    let (gx, _) = generator_forward(g, p, ps, cfg, "g", x, mode)?;
    let (fgx, _) = generator_forward(g, p, ps, cfg, "f", gx, mode)?;
    let (fy, _) = generator_forward(g, p, ps, cfg, "f", y, mode)?;
    let (gfy, _) = generator_forward(g, p, ps, cfg, "g", fy, mode)?;
    let a = mean_frame_l1(g, fgx, x)?;
    let b = mean_frame_l1(g, gfy, y)?;
    g.add(a, b)
}

/// Applies `G` or `F` frame by frame.
pub fn convert(frames: &FeatureMatrix, ckpt: &ParameterSet, dir: ConversionDirection) -> Result<FeatureMatrix> {
    ckpt.expect_kind(CYCLEGAN_KIND)?;
    let cfg: CycleGanConfig = ckpt.config()?;
    let (prefix, from, to) = match dir {
        ConversionDirection::Forward => ("g", "source", "target"),
        ConversionDirection::Backward => ("f", "target", "source"),
    };
    let t = standardize(ckpt, from, frames)?;
    let mut g = Graph::new();
    let p = ckpt.bind_prefix(&mut g, &format!("{prefix}."), false);
    let x = g.constant(t);
    let (y, _) = generator_forward(&mut g, &p, ckpt, &cfg, prefix, x, BatchNormMode::Infer)?;
    destandardize(ckpt, to, g.value(y), frames)
}

/// Zeroes both generators' output layers; with residual generators both
/// become the identity.
pub fn identity_generators(ps: &mut ParameterSet) -> Result<()> {
    for name in ["g.out.w", "g.out.b", "f.out.w", "f.out.b"] {
        let n = ps.get(name)?.len();
        ps.set_values(name, vec![0.0; n])?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleGanLogRow {
    pub step: usize,
    pub cycle_loss: f64,
    pub gen_adv_loss: f64,
    pub disc_loss: f64,
}

pub fn cyclegan_log(ckpt: &ParameterSet) -> Result<Vec<CycleGanLogRow>> {
    Ok(ckpt
        .buffer("log")?
        .data()
        .chunks(4)
        .map(|r| CycleGanLogRow { step: r[0] as usize, cycle_loss: r[1], gen_adv_loss: r[2], disc_loss: r[3] })
        .collect())
}

fn sample_rows(t: &Tensor, n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let d = t.cols();
    let rows = t.rows();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let r = rng.random_range(0..rows);
        data.extend_from_slice(&t.data()[r * d..(r + 1) * d]);
    }
    Tensor::matrix(n, d, data).expect("sampled rows")
}

fn frame_stats(a: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let d = a.dims();
    let n = a.frames() as f64;
    let mean = a.mean_row();
    let mut var = vec![0.0; d];
    for r in a.rows() {
        var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
    }
    (mean, var.into_iter().map(|v| v.sqrt().max(1e-6)).collect())
}

/// Generator objective: adversarial terms for both directions plus the
/// weighted cycle term. The weight applies per feature dimension, so the
/// per-frame L1 sums are divided by `dims`. Returns `(total, cycle, adversarial)`.
pub fn generator_objective(
    g: &mut Graph,
    p: &Bound,
    ps: &ParameterSet,
    cfg: &CycleGanConfig,
    x: Var,
    y: Var,
) -> Result<(Var, Var, Var, Vec<(String, Var)>)> {
    let mode = BatchNormMode::Train;
    let (gx, bn_g) = generator_forward(g, p, ps, cfg, "g", x, mode)?;
    let (fy, bn_f) = generator_forward(g, p, ps, cfg, "f", y, mode)?;
    let (fgx, _) = generator_forward(g, p, ps, cfg, "f", gx, mode)?;
    let (gfy, _) = generator_forward(g, p, ps, cfg, "g", fy, mode)?;
    let dy = discriminator_forward(g, p, cfg, "dy", gx)?;
    let dx = discriminator_forward(g, p, cfg, "dx", fy)?;
    let a1 = lsgan_to(g, dy, 1.0);
    let a2 = lsgan_to(g, dx, 1.0);
    let adv = g.add(a1, a2)?;
    let c1 = mean_frame_l1(g, fgx, x)?;
    let c2 = mean_frame_l1(g, gfy, y)?;
    let cyc = g.add(c1, c2)?;
    let wa = g.scale(adv, cfg.lambda_adv);
    let wc = g.scale(cyc, cfg.lambda_cyc / cfg.dims as f64);
    let total = g.add(wa, wc)?;
    let mut bns: Vec<(String, Var)> = bn_g.into_iter().enumerate().map(|(i, v)| (format!("g.bn{i}"), v)).collect();
    bns.extend(bn_f.into_iter().enumerate().map(|(i, v)| (format!("f.bn{i}"), v)));
    Ok((total, cyc, adv, bns))
}

/// Alternating least-squares adversarial training on unpaired frames.
pub fn train_cyclegan(source: &FeatureMatrix, target: &FeatureMatrix, cfg: &CycleGanConfig) -> Result<ParameterSet> {
    if source.frames() == 0 || target.frames() == 0 {
        return invalid("CycleGAN needs non-empty source and target frames");
    }
    if source.dims() != cfg.dims || target.dims() != cfg.dims {
        return invalid(format!("expected {}-dim frames, got {} and {}", cfg.dims, source.dims(), target.dims()));
    }
    let mut ps = init_cyclegan(cfg)?;
    for (side, feat) in [("source", source), ("target", target)] {
        let (mean, std) = frame_stats(feat);
        ps.set_buffer(&format!("norm.{side}.mean"), Tensor::new(vec![cfg.dims], mean)?);
        ps.set_buffer(&format!("norm.{side}.std"), Tensor::new(vec![cfg.dims], std)?);
    }
    let xs = standardize(&ps, "source", source)?;
    let ys = standardize(&ps, "target", target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc7c1e);
    let mut gen_state = RmspropState::new(RmspropConfig::with_lr(cfg.gen_lr));
    let mut disc_state = RmspropState::new(RmspropConfig::with_lr(cfg.disc_lr));
    let mut log = Vec::with_capacity(cfg.iterations);
    for step in 0..cfg.iterations {
        // critics
        let bx = sample_rows(&xs, cfg.disc_batch, &mut rng);
        let by = sample_rows(&ys, cfg.disc_batch, &mut rng);
        let mut g = Graph::new();
        let mut p = ps.bind_prefix(&mut g, "d", true);
        p.extend(ps.bind_prefix(&mut g, "g.", false));
        p.extend(ps.bind_prefix(&mut g, "f.", false));
        let x = g.constant(bx);
        let y = g.constant(by);
        let (gx, _) = generator_forward(&mut g, &p, &ps, cfg, "g", x, BatchNormMode::Train)?;
        let (fy, _) = generator_forward(&mut g, &p, &ps, cfg, "f", y, BatchNormMode::Train)?;
        let mut terms = Vec::new();
        for (prefix, real, fake) in [("dy", y, gx), ("dx", x, fy)] {
            let r = discriminator_forward(&mut g, &p, cfg, prefix, real)?;
            let f = discriminator_forward(&mut g, &p, cfg, prefix, fake)?;
            terms.push(lsgan_to(&mut g, r, 1.0));
            terms.push(lsgan_to(&mut g, f, 0.0));
        }
        let s1 = g.add(terms[0], terms[1])?;
        let s2 = g.add(terms[2], terms[3])?;
        let d_loss = g.add(s1, s2)?;
        let d_loss = g.scale(d_loss, 0.5);
        check_loss(step, g.value(d_loss).item())?;
        let grads = g.backward(d_loss)?;
        let d_grads: BTreeMap<_, _> = p.gradients(&g, &grads).into_iter().filter(|(k, _)| k.starts_with('d')).collect();
        let d_v = g.value(d_loss).item();
        rmsprop_step(&mut ps, &d_grads, &mut disc_state)?;

        // generators
        let bx = sample_rows(&xs, cfg.gen_batch, &mut rng);
        let by = sample_rows(&ys, cfg.gen_batch, &mut rng);
        let mut g = Graph::new();
        let mut p = ps.bind_prefix(&mut g, "g.", true);
        p.extend(ps.bind_prefix(&mut g, "f.", true));
        p.extend(ps.bind_prefix(&mut g, "d", false));
        let x = g.constant(bx);
        let y = g.constant(by);
        let (total, cyc, adv, bns) = generator_objective(&mut g, &p, &ps, cfg, x, y)?;
        check_loss(step, g.value(total).item())?;
        let grads = g.backward(total)?;
        let gen_grads: BTreeMap<_, _> = p.gradients(&g, &grads).into_iter().filter(|(k, _)| !k.starts_with('d')).collect();
        for (prefix, node) in bns {
            layers::update_running_stats(&mut ps, &prefix, &g, node)?;
        }
        log.push(CycleGanLogRow { step, cycle_loss: g.value(cyc).item(), gen_adv_loss: g.value(adv).item(), disc_loss: d_v });
        rmsprop_step(&mut ps, &gen_grads, &mut gen_state)?;
        if step % 100 == 0 {
            log::debug!("cyclegan step {step}: cycle {:.4} adv {:.4} d {d_v:.4}", g.value(cyc).item(), g.value(adv).item());
        }
    }
    ps.set_step(cfg.iterations as u64);
    let flat = log.iter().flat_map(|r| [r.step as f64, r.cycle_loss, r.gen_adv_loss, r.disc_loss]).collect();
    ps.set_buffer("log", Tensor::matrix(log.len(), 4, flat)?);
    Ok(ps)
}

/// Gradient check of one generator (`g`) or critic (`dy`) of a small model.
pub fn grad_check_cyclegan(cfg: &CycleGanConfig, network: &str, seed: u64) -> Result<f64> {
    let full = init_cyclegan(cfg)?;
    let mut ps = ParameterSet::new(CYCLEGAN_KIND, cfg)?;
    for (k, t) in full.iter().filter(|(k, _)| k.starts_with(&format!("{network}.")) || k.starts_with("buf/")) {
        if let Some(buf) = k.strip_prefix("buf/") {
            ps.set_buffer(buf, t.clone());
        } else {
            ps.insert(k, t.clone())?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 16;
    let x = Tensor::matrix(n, cfg.dims, (0..n * cfg.dims).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let frozen = ps.clone();
    grad_check(&ps, |g, p| {
        let xv = g.constant(x.clone());
        let out = if network.starts_with('d') {
            discriminator_forward(g, p, cfg, network, xv)?
        } else {
            let y = generator_forward(g, p, &frozen, cfg, network, xv, BatchNormMode::Train)?.0;
            if cfg.residual { g.sub(y, xv)? } else { y }
        };
        probe_loss(g, out, seed)
    })
}

/// Keeps records whose estimated SNR exceeds `min_snr`. Records without an
/// estimate are dropped; their count is returned alongside.
pub fn select_training_data(manifest: &CorpusManifest, min_snr: f64) -> Result<(CorpusManifest, usize)> {
    let missing = manifest.records().iter().filter(|r| r.snr_db.is_none()).count();
    if missing > 0 {
        log::warn!("{missing} record(s) without an SNR estimate excluded");
    }
    let kept = manifest.records().iter().filter(|r| r.snr_db.is_some_and(|s| s > min_snr)).cloned().collect();
    Ok((CorpusManifest::from_records(kept)?, missing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ConditionTag, UtteranceRecord};
    use crate::signal::FeatureKind;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(frames: usize, dims: usize, mean: f64, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..frames * dims).map(|_| mean + { let z: f64 = StandardNormal.sample(&mut rng); z }).collect();
        FeatureMatrix::new(v, frames, dims, 0.005, FeatureKind::MelDelta).unwrap()
    }

    fn small() -> CycleGanConfig {
        CycleGanConfig { gen_hidden: vec![8, 8, 8, 8], disc_hidden: vec![8, 8, 8, 8], gen_batch: 16, disc_batch: 32, iterations: 3, ..CycleGanConfig::default() }
    }

    #[test]
    fn identity_generators_give_zero_cycle_loss_and_passthrough() {
        let mut ps = init_cyclegan(&small()).unwrap();
        identity_generators(&mut ps).unwrap();
        let x = gaussian(20, 240, 0.0, 1);
        let y = gaussian(15, 240, 2.0, 2);
        assert_eq!(cycle_loss(&ps, &x, &y).unwrap(), 0.0);
        let out = convert(&x, &ps, ConversionDirection::Forward).unwrap();
        for (a, b) in out.values().iter().zip(x.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_inverse_shift_gives_zero_cycle_loss() {
        let mut ps = init_cyclegan(&small()).unwrap();
        for name in ["g.out.w", "f.out.w"] {
            let n = ps.get(name).unwrap().len();
            ps.set_values(name, vec![0.0; n]).unwrap();
        }
        ps.set_values("g.out.b", vec![0.75; 240]).unwrap();
        ps.set_values("f.out.b", vec![-0.75; 240]).unwrap();
        let x = gaussian(10, 240, 0.0, 3);
        let y = gaussian(10, 240, 1.0, 4);
        assert!(cycle_loss(&ps, &x, &y).unwrap() < 1e-9);
    }

    #[test]
    fn cycle_loss_matches_scalar_loop() {
        let ps = init_cyclegan(&small()).unwrap();
        let x = gaussian(9, 240, 0.0, 5);
        let y = gaussian(7, 240, 2.0, 6);
        let gx = convert(&x, &ps, ConversionDirection::Forward).unwrap();
        let fgx = convert(&gx, &ps, ConversionDirection::Backward).unwrap();
        let fy = convert(&y, &ps, ConversionDirection::Backward).unwrap();
        let gfy = convert(&fy, &ps, ConversionDirection::Forward).unwrap();
        let mut a = 0.0;
        for f in 0..x.frames() {
            let mut s = 0.0;
            for d in 0..240 {
                s += (fgx.get(f, d) - x.get(f, d)).abs();
            }
            a += s;
        }
        let mut b = 0.0;
        for f in 0..y.frames() {
            let mut s = 0.0;
            for d in 0..240 {
                s += (gfy.get(f, d) - y.get(f, d)).abs();
            }
            b += s;
        }
        let oracle = a / x.frames() as f64 + b / y.frames() as f64;
        let got = cycle_loss(&ps, &x, &y).unwrap();
        assert!((got - oracle).abs() <= 1e-6, "{got} vs {oracle}");
        assert!(got >= 0.0);
    }

    #[test]
    fn dim_mismatch_rejected() {
        let ps = init_cyclegan(&small()).unwrap();
        let x = gaussian(4, 80, 0.0, 1);
        assert!(matches!(cycle_loss(&ps, &x, &x), Err(crate::Error::InvalidArgument(_))));
        assert!(convert(&x, &ps, ConversionDirection::Forward).is_err());
    }

    #[test]
    fn convert_preserves_frames() {
        let ps = init_cyclegan(&small()).unwrap();
        for n in [1usize, 2, 17] {
            let out = convert(&gaussian(n, 240, 0.0, n as u64), &ps, ConversionDirection::Backward).unwrap();
            assert_eq!((out.frames(), out.dims()), (n, 240));
        }
    }

    #[test]
    fn training_is_reproducible() {
        let x = gaussian(64, 240, 0.0, 7);
        let y = gaussian(64, 240, 2.0, 8);
        let a = train_cyclegan(&x, &y, &small()).unwrap();
        let b = train_cyclegan(&x, &y, &small()).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(cyclegan_log(&a).unwrap().len(), 3);
    }

    #[test]
    fn discriminator_is_batch_size_invariant() {
        let cfg = small();
        let ps = init_cyclegan(&cfg).unwrap();
        let x = gaussian(5, 240, 0.0, 9);
        let run = |rows: usize| {
            let mut g = Graph::new();
            let p = ps.bind(&mut g, false);
            let xv = g.constant(Tensor::matrix(rows, 240, x.values()[..rows * 240].to_vec()).unwrap());
            let d = discriminator_forward(&mut g, &p, &cfg, "dy", xv).unwrap();
            g.value(d).data().to_vec()
        };
        assert_eq!(run(1)[0], run(5)[0]);
    }

    #[test]
    fn zero_cycle_weight_cuts_the_cycle_gradient_path() {
        let cfg = CycleGanConfig { lambda_cyc: 0.0, ..small() };
        let ps = init_cyclegan(&cfg).unwrap();
        let (x, y) = (gaussian(8, 240, 0.0, 10), gaussian(8, 240, 2.0, 11));
        let grads = |cfg: &CycleGanConfig, adv_only: bool| {
            let mut g = Graph::new();
            let mut p = ps.bind_prefix(&mut g, "g.", true);
            p.extend(ps.bind_prefix(&mut g, "f.", true));
            p.extend(ps.bind_prefix(&mut g, "d", false));
            let xv = g.constant(Tensor::matrix(8, 240, x.values().to_vec()).unwrap());
            let yv = g.constant(Tensor::matrix(8, 240, y.values().to_vec()).unwrap());
            let (total, _, adv, _) = generator_objective(&mut g, &p, &ps, cfg, xv, yv).unwrap();
            let gr = g.backward(if adv_only { adv } else { total }).unwrap();
            p.gradients(&g, &gr)
        };
        let adv_only = grads(&cfg, true);
        assert_eq!(grads(&cfg, false), adv_only);
        let with_cycle = CycleGanConfig { lambda_cyc: 10.0, ..small() };
        assert_ne!(grads(&with_cycle, false), grads(&with_cycle, true));
    }

    #[test]
    fn small_networks_pass_grad_check() {
        let cfg = CycleGanConfig { dims: 16, gen_hidden: vec![6, 6, 6, 6], disc_hidden: vec![6, 6, 6, 6], ..CycleGanConfig::default() };
        for net in ["g", "f", "dx"] {
            let err = grad_check_cyclegan(&cfg, net, 3).unwrap();
            assert!(err <= 1e-4, "{net}: {err}");
        }
    }

    fn records(snrs: &[Option<f64>]) -> CorpusManifest {
        let rs = snrs
            .iter()
            .enumerate()
            .map(|(i, s)| UtteranceRecord {
                id: format!("u{i}"),
                audio_path: format!("u{i}.wav").into(),
                transcript: String::new(),
                condition: ConditionTag::Enhanced("n".into()),
                duration: 1.0,
                snr_db: *s,
            })
            .collect();
        CorpusManifest::from_records(rs).unwrap()
    }

    #[test]
    fn selection_filters_on_snr() {
        let m = records(&[Some(25.0), Some(31.0), Some(40.0)]);
        assert_eq!(select_training_data(&m, 30.0).unwrap().0.len(), 2);
        assert_eq!(select_training_data(&m, f64::NEG_INFINITY).unwrap().0.len(), 3);
        let with_missing = records(&[Some(35.0), None]);
        assert_eq!(select_training_data(&with_missing, 30.0).unwrap(), (records(&[Some(35.0)]), 1));
    }

    #[test]
    fn selection_matches_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let snrs: Vec<Option<f64>> = (0..100).map(|_| Some(rng.random_range(0.0..60.0))).collect();
        let expect = snrs.iter().filter(|s| s.unwrap() > 30.0).count();
        assert_eq!(select_training_data(&records(&snrs), 30.0).unwrap().0.len(), expect);
    }
}
