use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{ConvSpec, Graph, Var};
use super::params::{Bound, ParameterSet};
use super::tensor::Tensor;
use crate::error::{invalid, Result};

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchNormMode {
    Train,
    Infer,
}

/// Layer inventory reachable through [`layer_forward`].
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Affine,
    Conv1d(ConvSpec),
    ConvTranspose1d { stride: usize, pad: usize, out_len: usize },
    /// `tanh(a) * sigmoid(b)` with `a`, `b` the two halves of axis 1.
    Gated,
    Lstm { reverse: bool },
    BiLstm,
    BatchNorm(BatchNormMode),
    Tanh,
    Sigmoid,
    LeakyRelu(f64),
    Softmax,
    FeedbackDropout { rate: f64, seed: u64 },
}

pub fn init_affine(ps: &mut ParameterSet, prefix: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Result<()> {
    ps.insert_uniform(format!("{prefix}.w"), &[inputs, outputs], inputs, rng)?;
    ps.insert_filled(format!("{prefix}.b"), &[outputs], 0.0)
}

/// `x W + b` for `x: [n, in]`.
pub fn affine(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{prefix}.w"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

pub fn init_conv1d(ps: &mut ParameterSet, prefix: &str, c_in: usize, c_out: usize, kernel: usize, rng: &mut impl Rng) -> Result<()> {
    ps.insert_uniform(format!("{prefix}.w"), &[c_out, c_in, kernel], c_in * kernel, rng)?;
    ps.insert_filled(format!("{prefix}.b"), &[c_out], 0.0)
}

pub fn conv1d(g: &mut Graph, p: &Bound, prefix: &str, x: Var, spec: ConvSpec) -> Result<Var> {
    let w = p.get(&format!("{prefix}.w"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    g.conv1d(x, w, Some(b), spec)
}

pub fn init_conv_transpose1d(ps: &mut ParameterSet, prefix: &str, c_in: usize, c_out: usize, kernel: usize, rng: &mut impl Rng) -> Result<()> {
    ps.insert_uniform(format!("{prefix}.w"), &[c_in, c_out, kernel], c_in * kernel, rng)?;
    ps.insert_filled(format!("{prefix}.b"), &[c_out], 0.0)
}

pub fn conv_transpose1d(g: &mut Graph, p: &Bound, prefix: &str, x: Var, stride: usize, pad: usize, out_len: usize) -> Result<Var> {
    let w = p.get(&format!("{prefix}.w"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    g.conv_transpose1d(x, w, Some(b), stride, pad, out_len)
}

pub fn gated(g: &mut Graph, x: Var) -> Result<Var> {
    let c = g.shape(x)[1];
    if c % 2 != 0 {
        return invalid(format!("gated activation needs an even axis-1 size, got {:?}", g.shape(x)));
    }
    let a = g.slice(x, 1, 0, c / 2)?;
    let b = g.slice(x, 1, c / 2, c)?;
    let ta = g.tanh(a);
    let sb = g.sigmoid(b);
    g.mul(ta, sb)
}

/// Gate order is input, forget, cell, output; forget bias starts at 1.
pub fn init_lstm(ps: &mut ParameterSet, prefix: &str, inputs: usize, hidden: usize, rng: &mut impl Rng) -> Result<()> {
    ps.insert_uniform(format!("{prefix}.wx"), &[inputs, 4 * hidden], hidden, rng)?;
    ps.insert_uniform(format!("{prefix}.wh"), &[hidden, 4 * hidden], hidden, rng)?;
    let mut b = vec![0.0; 4 * hidden];
    b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
    ps.insert(format!("{prefix}.b"), Tensor::new(vec![4 * hidden], b)?)
}

/// One LSTM step from precomputed input projections `pre: [1, 4H]`.
pub fn lstm_cell(g: &mut Graph, pre: Var, h: Var, c: Var, wh: Var) -> Result<(Var, Var)> {
    let hidden = g.shape(h)[1];
    let rec = g.matmul(h, wh)?;
    let z = g.add(pre, rec)?;
    let zi = g.slice(z, 1, 0, hidden)?;
    let zf = g.slice(z, 1, hidden, 2 * hidden)?;
    let zg = g.slice(z, 1, 2 * hidden, 3 * hidden)?;
    let zo = g.slice(z, 1, 3 * hidden, 4 * hidden)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c2 = g.add(keep, write)?;
    let tc = g.tanh(c2);
    let h2 = g.mul(o, tc)?;
    Ok((h2, c2))
}

/// Runs over the rows of `x: [T, in]`, returning `[T, H]`.
pub fn lstm(g: &mut Graph, p: &Bound, prefix: &str, x: Var, reverse: bool) -> Result<Var> {
    let wx = p.get(&format!("{prefix}.wx"))?;
    let wh = p.get(&format!("{prefix}.wh"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    let hidden = g.shape(wh)[0];
    let steps = g.shape(x)[0];
    if steps == 0 {
        return invalid("lstm over an empty sequence");
    }
    let proj = g.matmul(x, wx)?;
    let proj = g.add_row(proj, b)?;
    let mut h = g.constant(Tensor::zeros(&[1, hidden]));
    let mut c = g.constant(Tensor::zeros(&[1, hidden]));
    let mut outs = vec![None; steps];
    let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
    for t in order {
        let pre = g.slice(proj, 0, t, t + 1)?;
        (h, c) = lstm_cell(g, pre, h, c, wh)?;
        outs[t] = Some(h);
    }
    let outs: Vec<Var> = outs.into_iter().map(|v| v.expect("every step visited")).collect();
    g.concat(&outs, 0)
}

pub fn init_bilstm(ps: &mut ParameterSet, prefix: &str, inputs: usize, hidden: usize, rng: &mut impl Rng) -> Result<()> {
    init_lstm(ps, &format!("{prefix}.fw"), inputs, hidden, rng)?;
    init_lstm(ps, &format!("{prefix}.bw"), inputs, hidden, rng)
}

/// Forward and backward passes concatenated: `[T, 2H]`.
pub fn bilstm(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let f = lstm(g, p, &format!("{prefix}.fw"), x, false)?;
    let b = lstm(g, p, &format!("{prefix}.bw"), x, true)?;
    g.concat(&[f, b], 1)
}

pub fn init_batch_norm(ps: &mut ParameterSet, prefix: &str, features: usize) -> Result<()> {
    ps.insert_filled(format!("{prefix}.gamma"), &[features], 1.0)?;
    ps.insert_filled(format!("{prefix}.beta"), &[features], 0.0)?;
    ps.set_buffer(&format!("{prefix}.mean"), Tensor::zeros(&[features]));
    ps.set_buffer(&format!("{prefix}.var"), Tensor::filled(&[features], 1.0));
    Ok(())
}

/// Batch statistics in training mode, stored running statistics otherwise.
pub fn batch_norm(g: &mut Graph, p: &Bound, ps: &ParameterSet, prefix: &str, x: Var, mode: BatchNormMode) -> Result<Var> {
    let gamma = p.get(&format!("{prefix}.gamma"))?;
    let beta = p.get(&format!("{prefix}.beta"))?;
    match mode {
        BatchNormMode::Train => g.batch_norm(x, gamma, beta, BATCH_NORM_EPS),
        BatchNormMode::Infer => {
            let mean = ps.buffer(&format!("{prefix}.mean"))?;
            let var = ps.buffer(&format!("{prefix}.var"))?;
            let shift = g.constant(mean.map(|m| -m));
            let scale = g.constant(var.map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()));
            let centered = g.add_row(x, shift)?;
            let normed = g.mul_row(centered, scale)?;
            let scaled = g.mul_row(normed, gamma)?;
            g.add_row(scaled, beta)
        }
    }
}

/// Folds the batch statistics recorded at `node` into the running buffers.
pub fn update_running_stats(ps: &mut ParameterSet, prefix: &str, g: &Graph, node: Var) -> Result<()> {
    let Some((mean, var)) = g.batch_stats(node) else {
        return invalid(format!("{prefix}: node is not a training-mode batch norm"));
    };
    let n = g.shape(node)[0] as f64;
    let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
    let m = BATCH_NORM_MOMENTUM;
    let old_mean = ps.buffer(&format!("{prefix}.mean"))?.data().to_vec();
    let old_var = ps.buffer(&format!("{prefix}.var"))?.data().to_vec();
    let new_mean = old_mean.iter().zip(mean).map(|(o, b)| (1.0 - m) * o + m * b).collect();
    let new_var = old_var.iter().zip(var).map(|(o, b)| (1.0 - m) * o + m * b * unbiased).collect();
    ps.set_buffer(&format!("{prefix}.mean"), Tensor::new(vec![mean.len()], new_mean)?);
    ps.set_buffer(&format!("{prefix}.var"), Tensor::new(vec![var.len()], new_var)?);
    Ok(())
}

/// Keep mask with entries 0 (dropped, probability `rate`) or 1.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 }).collect()
}

/// Applies one layer on a graph. Parameters live under `prefix`.
pub fn apply(g: &mut Graph, kind: &LayerKind, ps: &ParameterSet, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    match kind {
        LayerKind::Affine => affine(g, p, prefix, x),
        LayerKind::Conv1d(spec) => conv1d(g, p, prefix, x, *spec),
        LayerKind::ConvTranspose1d { stride, pad, out_len } => conv_transpose1d(g, p, prefix, x, *stride, *pad, *out_len),
        LayerKind::Gated => gated(g, x),
        LayerKind::Lstm { reverse } => lstm(g, p, prefix, x, *reverse),
        LayerKind::BiLstm => bilstm(g, p, prefix, x),
        LayerKind::BatchNorm(mode) => batch_norm(g, p, ps, prefix, x, *mode),
        LayerKind::Tanh => Ok(g.tanh(x)),
        LayerKind::Sigmoid => Ok(g.sigmoid(x)),
        LayerKind::LeakyRelu(slope) => Ok(g.leaky_relu(x, *slope)),
        LayerKind::Softmax => Ok(g.softmax(x)),
        LayerKind::FeedbackDropout { rate, seed } => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
            let mask = dropout_mask(g.value(x).len(), *rate, &mut rng);
            g.mul_const(x, Rc::new(mask))
        }
    }
}

/// Deterministic single-layer forward pass outside of training.
pub fn layer_forward(kind: &LayerKind, params: &ParameterSet, prefix: &str, input: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(input.clone());
    let y = apply(&mut g, kind, params, &p, prefix, x)?;
    Ok(g.value(y).clone())
}
