//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the tape in reverse and accumulates vector-Jacobian products.

use std::rc::Rc;

use super::tensor::{gemm, Tensor};
use crate::error::{invalid, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Zero padding and sampling of a 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvSpec {
    /// Left-only padding so output `t` sees inputs `<= t`.
    pub fn causal(kernel: usize, dilation: usize) -> Self {
        Self { stride: 1, dilation, pad_left: dilation * (kernel - 1), pad_right: 0 }
    }

    /// Symmetric padding for odd kernels; stride divides the length.
    pub fn same(kernel: usize, stride: usize) -> Self {
        let p = (kernel - 1) / 2;
        Self { stride, dilation: 1, pad_left: p, pad_right: p }
    }

    pub fn output_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + self.pad_left + self.pad_right;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Abs(Var),
    Square(Var),
    Softmax(Var),
    MulConst(Var, Rc<Vec<f64>>),
    Sum(Var),
    Mean(Var),
    MeanLast(Var),
    SoftmaxCrossEntropy(Var, Rc<Vec<usize>>),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    ShiftRows(Var, usize),
    Reshape(Var),
    Embedding(Var, Rc<Vec<usize>>),
    Conv1d { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    ConvTranspose1d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<f64>, inv_std: Vec<f64>, xhat: Rc<Vec<f64>>, var: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn shape_err<T>(op: &str, a: &[usize], b: &[usize]) -> Result<T> {
    invalid(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

/// `[outer, axis, inner]` factorization of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, tracked: true });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf (data).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, tracked: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Batch mean and biased variance recorded by a training-mode batch norm.
    pub fn batch_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op, &[x])
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err(name, ta.shape(), tb.shape());
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return shape_err("matmul", ta.shape(), tb.shape());
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, 0.0);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Broadcast `b` (length = last dim of `x`) over every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        self.row_op(x, b, "add_row", |v, r| v + r, Op::AddRow(x, b))
    }

    pub fn mul_row(&mut self, x: Var, s: Var) -> Result<Var> {
        self.row_op(x, s, "mul_row", |v, r| v * r, Op::MulRow(x, s))
    }

    fn row_op(&mut self, x: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let n = *tx.shape().last().unwrap_or(&0);
        if tb.len() != n {
            return shape_err(name, tx.shape(), tb.shape());
        }
        let data = tx.data().chunks(n.max(1)).flat_map(|row| row.iter().zip(tb.data()).map(|(&v, &r)| f(v, r))).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(value, op, &[x, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = *t.shape().last().unwrap_or(&1);
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            softmax_in_place(row);
        }
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Softmax(x), &[x])
    }

    /// Elementwise product with a fixed mask.
    pub fn mul_const(&mut self, x: Var, mask: Rc<Vec<f64>>) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.len() {
            return invalid(format!("mask of {} entries for tensor {:?}", mask.len(), t.shape()));
        }
        let data = t.data().iter().zip(mask.iter()).map(|(a, b)| a * b).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, Op::MulConst(x, mask), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Mean over the last dimension, which is dropped.
    pub fn mean_last(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = *t.shape().last().unwrap_or(&1);
        let data = t.data().chunks(n.max(1)).map(|c| c.iter().sum::<f64>() / n as f64).collect();
        let shape = t.shape()[..t.shape().len() - 1].to_vec();
        let value = Tensor::new(if shape.is_empty() { vec![1] } else { shape }, data).expect("reduced shape");
        self.push(value, Op::MeanLast(x), &[x])
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Rc<Vec<usize>>) -> Result<Var> {
        let t = self.value(logits);
        if t.shape().len() != 2 || t.shape()[0] != targets.len() {
            return invalid(format!("cross entropy: logits {:?} for {} targets", t.shape(), targets.len()));
        }
        let c = t.shape()[1];
        if let Some(bad) = targets.iter().find(|&&y| y >= c) {
            return invalid(format!("target class {bad} out of {c} classes"));
        }
        let mut total = 0.0;
        for (row, &y) in t.data().chunks(c).zip(targets.iter()) {
            total += log_sum_exp(row) - row[y];
        }
        let loss = total / targets.len().max(1) as f64;
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCrossEntropy(logits, targets), &[logits]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return invalid(format!("concat axis {axis} for shape {first:?}"));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let ok = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return shape_err("concat", &first, s);
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let width = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * width..(o + 1) * width]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.shape().len() || start > end || end > t.shape()[axis] {
            return invalid(format!("slice {start}..{end} on axis {axis} of {:?}", t.shape()));
        }
        let (outer, dim, inner) = split_axis(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * dim * inner;
            data.extend_from_slice(&t.data()[base + start * inner..base + end * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = end - start;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Slice { x, axis, start }, &[x]))
    }

    /// `y[t] = x[t - d]` along the first axis, zero-filled.
    pub fn shift_rows(&mut self, x: Var, d: usize) -> Var {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = vec![0.0; t.len()];
        if d < rows {
            data[d * cols..].copy_from_slice(&t.data()[..(rows - d) * cols]);
        }
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::ShiftRows(x, d), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: Rc<Vec<usize>>) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return invalid(format!("embedding table must be 2-D, got {:?}", t.shape()));
        }
        let (v, c) = (t.shape()[0], t.shape()[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return invalid(format!("embedding id {bad} out of {v}"));
        }
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids.iter() {
            data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        let value = Tensor::matrix(ids.len(), c, data)?;
        Ok(self.push(value, Op::Embedding(table, ids), &[table]))
    }

    /// `x: [batch, c_in, time]`, `w: [c_out, c_in, kernel]`, `b: [c_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.shape().len() != 3 || tw.shape().len() != 3 || tx.shape()[1] != tw.shape()[1] {
            return shape_err("conv1d", tx.shape(), tw.shape());
        }
        let (batch, c_in, len) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (c_out, kernel) = (tw.shape()[0], tw.shape()[2]);
        if let Some(b) = b {
            if self.value(b).len() != c_out {
                return shape_err("conv1d bias", tw.shape(), self.value(b).shape());
            }
        }
        let Some(t_out) = spec.output_len(len, kernel) else {
            return invalid(format!("conv1d: input length {len} too short for kernel {kernel}"));
        };
        let mut out = vec![0.0; batch * c_out * t_out];
        let mut cols = vec![0.0; c_in * kernel * t_out];
        for bi in 0..batch {
            im2col(&tx.data()[bi * c_in * len..(bi + 1) * c_in * len], c_in, len, kernel, spec, t_out, &mut cols);
            let y = &mut out[bi * c_out * t_out..(bi + 1) * c_out * t_out];
            gemm(c_out, c_in * kernel, t_out, tw.data(), false, &cols, false, y, 0.0);
            if let Some(b) = b {
                for (row, &bias) in y.chunks_mut(t_out).zip(self.nodes[b.0].value.data()) {
                    row.iter_mut().for_each(|v| *v += bias);
                }
            }
        }
        let value = Tensor::new(vec![batch, c_out, t_out], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(value, Op::Conv1d { x, w, b, spec }, &inputs))
    }

    /// `x: [batch, c_in, time]`, `w: [c_in, c_out, kernel]`; input step `t`
    /// and tap `k` land on output index `t * stride + k - pad`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, out_len: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.shape().len() != 3 || tw.shape().len() != 3 || tx.shape()[1] != tw.shape()[0] {
            return shape_err("conv_transpose1d", tx.shape(), tw.shape());
        }
        let (batch, c_in, len) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (c_out, kernel) = (tw.shape()[1], tw.shape()[2]);
        let mut out = vec![0.0; batch * c_out * out_len];
        let mut z = vec![0.0; c_out * kernel * len];
        for bi in 0..batch {
            let xb = &tx.data()[bi * c_in * len..(bi + 1) * c_in * len];
            gemm(c_out * kernel, c_in, len, tw.data(), true, xb, false, &mut z, 0.0);
            let y = &mut out[bi * c_out * out_len..(bi + 1) * c_out * out_len];
            for co in 0..c_out {
                for k in 0..kernel {
                    let zr = &z[(co * kernel + k) * len..(co * kernel + k + 1) * len];
                    for (t, &v) in zr.iter().enumerate() {
                        let o = (t * stride + k) as isize - pad as isize;
                        if o >= 0 && (o as usize) < out_len {
                            y[co * out_len + o as usize] += v;
                        }
                    }
                }
            }
            if let Some(b) = b {
                for (row, &bias) in y.chunks_mut(out_len).zip(self.nodes[b.0].value.data()) {
                    row.iter_mut().for_each(|v| *v += bias);
                }
            }
        }
        let value = Tensor::new(vec![batch, c_out, out_len], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(value, Op::ConvTranspose1d { x, w, b, stride, pad }, &inputs))
    }

    /// Training-mode batch normalization of a 2-D `[batch, features]` input.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 || self.value(gamma).len() != t.shape()[1] || self.value(beta).len() != t.shape()[1] {
            return shape_err("batch_norm", t.shape(), self.value(gamma).shape());
        }
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for row in t.data().chunks(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for row in t.data().chunks(d) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(n * d);
        let mut out = Vec::with_capacity(n * d);
        for row in t.data().chunks(d) {
            for j in 0..d {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + bt[j]);
            }
        }
        let value = Tensor::matrix(n, d, out)?;
        let op = Op::BatchNorm { x, gamma, beta, mean, inv_std, xhat: Rc::new(xhat), var };
        Ok(self.push(value, op, &[x, gamma, beta]))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return invalid(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.tracked {
                self.propagate(node, &dy, &mut grads);
            }
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].tracked {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn propagate(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        let like = |v: Var, data: Vec<f64>| Tensor::new(self.shape(v).to_vec(), data).expect("gradient shape");
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.tracked(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, dy.data(), false, tb.data(), true, &mut da, 0.0);
                    self.accumulate(grads, *a, like(*a, da));
                }
                if self.tracked(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, dy.data(), false, &mut db, 0.0);
                    self.accumulate(grads, *b, like(*b, db));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.tracked(*a) {
                    self.accumulate(grads, *a, like(*a, dy.data().iter().zip(tb.data()).map(|(g, v)| g * v).collect()));
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, like(*b, dy.data().iter().zip(ta.data()).map(|(g, v)| g * v).collect()));
                }
            }
            Op::AddRow(x, b) => {
                self.accumulate(grads, *x, dy.clone());
                if self.tracked(*b) {
                    let n = self.value(*b).len();
                    let mut db = vec![0.0; n];
                    for row in dy.data().chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                    self.accumulate(grads, *b, like(*b, db));
                }
            }
            Op::MulRow(x, s) => {
                let (tx, ts) = (self.value(*x), self.value(*s));
                let n = ts.len();
                if self.tracked(*x) {
                    let dx = dy.data().chunks(n).flat_map(|row| row.iter().zip(ts.data()).map(|(g, v)| g * v)).collect();
                    self.accumulate(grads, *x, like(*x, dx));
                }
                if self.tracked(*s) {
                    let mut ds = vec![0.0; n];
                    for (grow, xrow) in dy.data().chunks(n).zip(tx.data().chunks(n)) {
                        for j in 0..n {
                            ds[j] += grow[j] * xrow[j];
                        }
                    }
                    self.accumulate(grads, *s, like(*s, ds));
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, dy.map(|g| g * s)),
            Op::AddScalar(x) | Op::Reshape(x) => self.accumulate(grads, *x, like(*x, dy.data().to_vec())),
            Op::Tanh(x) => {
                let d = dy.data().iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Sigmoid(x) => {
                let d = dy.data().iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::LeakyRelu(x, slope) => {
                let tx = self.value(*x);
                let d = dy.data().iter().zip(tx.data()).map(|(g, v)| if *v > 0.0 { *g } else { g * slope }).collect();
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Abs(x) => {
                let tx = self.value(*x);
                let d = dy.data().iter().zip(tx.data()).map(|(g, v)| if *v > 0.0 { *g } else if *v < 0.0 { -g } else { 0.0 }).collect();
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Square(x) => {
                let tx = self.value(*x);
                let d = dy.data().iter().zip(tx.data()).map(|(g, v)| 2.0 * g * v).collect();
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Softmax(x) => {
                let n = *y.shape().last().unwrap_or(&1);
                let mut d = Vec::with_capacity(y.len());
                for (srow, grow) in y.data().chunks(n).zip(dy.data().chunks(n)) {
                    let dot: f64 = srow.iter().zip(grow).map(|(s, g)| s * g).sum();
                    d.extend(srow.iter().zip(grow).map(|(s, g)| s * (g - dot)));
                }
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::MulConst(x, mask) => {
                let d = dy.data().iter().zip(mask.iter()).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Sum(x) => {
                let g = dy.item();
                self.accumulate(grads, *x, Tensor::filled(self.shape(*x), g));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len().max(1) as f64;
                self.accumulate(grads, *x, Tensor::filled(self.shape(*x), dy.item() / n));
            }
            Op::MeanLast(x) => {
                let n = *self.shape(*x).last().unwrap_or(&1);
                let d = dy.data().iter().flat_map(|g| std::iter::repeat_n(g / n as f64, n)).collect();
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::SoftmaxCrossEntropy(x, targets) => {
                let t = self.value(*x);
                let c = t.shape()[1];
                let scale = dy.item() / targets.len().max(1) as f64;
                let mut d = t.data().to_vec();
                for (row, &yi) in d.chunks_mut(c).zip(targets.iter()) {
                    softmax_in_place(row);
                    row[yi] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_axis(y.shape(), *axis);
                let total = y.shape()[*axis];
                let mut offset = 0;
                for &p in parts {
                    let width = self.shape(p)[*axis];
                    if self.tracked(p) {
                        let mut d = Vec::with_capacity(outer * width * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&dy.data()[base..base + width * inner]);
                        }
                        self.accumulate(grads, p, like(p, d));
                    }
                    offset += width;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, dim, inner) = split_axis(self.shape(*x), *axis);
                let width = y.shape()[*axis];
                let mut d = vec![0.0; self.value(*x).len()];
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    d[dst..dst + width * inner].copy_from_slice(&dy.data()[o * width * inner..(o + 1) * width * inner]);
                }
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::ShiftRows(x, s) => {
                let (rows, cols) = (y.rows(), y.cols());
                let mut d = vec![0.0; y.len()];
                if *s < rows {
                    d[..(rows - s) * cols].copy_from_slice(&dy.data()[s * cols..]);
                }
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Embedding(table, ids) => {
                let c = self.shape(*table)[1];
                let mut d = vec![0.0; self.value(*table).len()];
                for (row, &i) in dy.data().chunks(c).zip(ids.iter()) {
                    d[i * c..(i + 1) * c].iter_mut().zip(row).for_each(|(a, g)| *a += g);
                }
                self.accumulate(grads, *table, like(*table, d));
            }
            Op::Conv1d { x, w, b, spec } => self.conv1d_backward(*x, *w, *b, *spec, dy, grads),
            Op::ConvTranspose1d { x, w, b, stride, pad } => self.conv_transpose1d_backward(*x, *w, *b, *stride, *pad, dy, grads),
            Op::BatchNorm { x, gamma, beta, inv_std, xhat, .. } => {
                let d = inv_std.len();
                let n = dy.len() / d;
                let g = self.value(*gamma).data();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut sum_dxhat = vec![0.0; d];
                let mut sum_dxhat_xhat = vec![0.0; d];
                for (grow, hrow) in dy.data().chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        dbeta[j] += grow[j];
                        dgamma[j] += grow[j] * hrow[j];
                        let dh = grow[j] * g[j];
                        sum_dxhat[j] += dh;
                        sum_dxhat_xhat[j] += dh * hrow[j];
                    }
                }
                if self.tracked(*x) {
                    let mut dx = Vec::with_capacity(n * d);
                    for (grow, hrow) in dy.data().chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            let dh = grow[j] * g[j];
                            dx.push(inv_std[j] / n as f64 * (n as f64 * dh - sum_dxhat[j] - hrow[j] * sum_dxhat_xhat[j]));
                        }
                    }
                    self.accumulate(grads, *x, like(*x, dx));
                }
                self.accumulate(grads, *gamma, like(*gamma, dgamma));
                self.accumulate(grads, *beta, like(*beta, dbeta));
            }
        }
    }

    fn conv1d_backward(&self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let (tx, tw) = (self.value(x), self.value(w));
        let (batch, c_in, len) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (c_out, kernel) = (tw.shape()[0], tw.shape()[2]);
        let t_out = dy.shape()[2];
        let ck = c_in * kernel;
        let mut cols = vec![0.0; ck * t_out];
        let mut dw = vec![0.0; tw.len()];
        let mut dx = vec![0.0; if self.tracked(x) { tx.len() } else { 0 }];
        let mut dcols = vec![0.0; ck * t_out];
        for bi in 0..batch {
            let dyb = &dy.data()[bi * c_out * t_out..(bi + 1) * c_out * t_out];
            if self.tracked(w) {
                im2col(&tx.data()[bi * c_in * len..(bi + 1) * c_in * len], c_in, len, kernel, spec, t_out, &mut cols);
                gemm(c_out, t_out, ck, dyb, false, &cols, true, &mut dw, 1.0);
            }
            if self.tracked(x) {
                gemm(ck, c_out, t_out, tw.data(), true, dyb, false, &mut dcols, 0.0);
                col2im(&dcols, c_in, len, kernel, spec, t_out, &mut dx[bi * c_in * len..(bi + 1) * c_in * len]);
            }
        }
        if self.tracked(x) {
            self.accumulate(grads, x, Tensor::new(tx.shape().to_vec(), dx).expect("dx shape"));
        }
        self.accumulate(grads, w, Tensor::new(tw.shape().to_vec(), dw).expect("dw shape"));
        if let Some(b) = b {
            let db = channel_sums(dy.data(), batch, c_out, t_out);
            self.accumulate(grads, b, Tensor::new(self.shape(b).to_vec(), db).expect("db shape"));
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_transpose1d_backward(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let (tx, tw) = (self.value(x), self.value(w));
        let (batch, c_in, len) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (c_out, kernel) = (tw.shape()[1], tw.shape()[2]);
        let out_len = dy.shape()[2];
        let ck = c_out * kernel;
        let mut dz = vec![0.0; ck * len];
        let mut dw = vec![0.0; tw.len()];
        let mut dx = vec![0.0; tx.len()];
        for bi in 0..batch {
            let dyb = &dy.data()[bi * c_out * out_len..(bi + 1) * c_out * out_len];
            for co in 0..c_out {
                for k in 0..kernel {
                    let row = &mut dz[(co * kernel + k) * len..(co * kernel + k + 1) * len];
                    for (t, v) in row.iter_mut().enumerate() {
                        let o = (t * stride + k) as isize - pad as isize;
                        *v = if o >= 0 && (o as usize) < out_len { dyb[co * out_len + o as usize] } else { 0.0 };
                    }
                }
            }
            let xb = &tx.data()[bi * c_in * len..(bi + 1) * c_in * len];
            if self.tracked(x) {
                gemm(c_in, ck, len, tw.data(), false, &dz, false, &mut dx[bi * c_in * len..(bi + 1) * c_in * len], 0.0);
            }
            if self.tracked(w) {
                gemm(c_in, len, ck, xb, false, &dz, true, &mut dw, 1.0);
            }
        }
        self.accumulate(grads, x, Tensor::new(tx.shape().to_vec(), dx).expect("dx shape"));
        self.accumulate(grads, w, Tensor::new(tw.shape().to_vec(), dw).expect("dw shape"));
        if let Some(b) = b {
            let db = channel_sums(dy.data(), batch, c_out, out_len);
            self.accumulate(grads, b, Tensor::new(self.shape(b).to_vec(), db).expect("db shape"));
        }
    }
}

fn channel_sums(dy: &[f64], batch: usize, channels: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels];
    for bi in 0..batch {
        for (c, o) in out.iter_mut().enumerate() {
            let base = (bi * channels + c) * len;
            *o += dy[base..base + len].iter().sum::<f64>();
        }
    }
    out
}

fn im2col(x: &[f64], c_in: usize, len: usize, kernel: usize, spec: ConvSpec, t_out: usize, cols: &mut [f64]) {
    for ci in 0..c_in {
        let xr = &x[ci * len..(ci + 1) * len];
        for k in 0..kernel {
            let row = &mut cols[(ci * kernel + k) * t_out..(ci * kernel + k + 1) * t_out];
            let offset = (k * spec.dilation) as isize - spec.pad_left as isize;
            for (to, v) in row.iter_mut().enumerate() {
                let i = (to * spec.stride) as isize + offset;
                *v = if i >= 0 && (i as usize) < len { xr[i as usize] } else { 0.0 };
            }
        }
    }
}

fn col2im(cols: &[f64], c_in: usize, len: usize, kernel: usize, spec: ConvSpec, t_out: usize, dx: &mut [f64]) {
    for ci in 0..c_in {
        for k in 0..kernel {
            let row = &cols[(ci * kernel + k) * t_out..(ci * kernel + k + 1) * t_out];
            let offset = (k * spec.dilation) as isize - spec.pad_left as isize;
            for (to, &v) in row.iter().enumerate() {
                let i = (to * spec.stride) as isize + offset;
                if i >= 0 && (i as usize) < len {
                    dx[ci * len + i as usize] += v;
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}
