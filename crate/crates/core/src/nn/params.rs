use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};

/// Prefix marking non-trainable tensors (running statistics, logs).
pub const BUFFER_PREFIX: &str = "buf/";

/// Named tensors plus the metadata needed to rebuild a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    kind: String,
    config_json: String,
    step: u64,
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new(kind: impl Into<String>, config: &impl Serialize) -> Result<Self> {
        Ok(Self::from_parts(kind.into(), serde_json::to_string(config)?, 0, BTreeMap::new()))
    }

    pub(crate) fn from_parts(kind: String, config_json: String, step: u64, tensors: BTreeMap<String, Tensor>) -> Self {
        Self { kind, config_json, step, tensors }
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn config_json(&self) -> &str {
        &self.config_json
    }

    /// Hex SHA-256 of the serialized config.
    pub fn config_digest(&self) -> String {
        hex::encode(Sha256::digest(self.config_json.as_bytes()))
    }

    pub fn config<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_str(&self.config_json)?)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return invalid(format!("expected a {kind} checkpoint, got {}", self.kind));
        }
        Ok(())
    }

    /// Adds a tensor; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return invalid(format!("duplicate parameter {name}"));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn insert_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn insert_filled(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Result<()> {
        self.insert(name, Tensor::filled(shape, value))
    }

    /// Stores or overwrites a non-trainable buffer.
    pub fn set_buffer(&mut self, name: &str, t: Tensor) {
        self.tensors.insert(format!("{BUFFER_PREFIX}{name}"), t);
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.get(&format!("{BUFFER_PREFIX}{name}"))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::NotFound(format!("parameter {name} in {} model", self.kind)))
    }

    /// Replaces values, keeping the shape.
    pub fn set_values(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        let t = self.tensors.get_mut(name).ok_or_else(|| Error::NotFound(format!("parameter {name}")))?;
        if t.len() != values.len() {
            return invalid(format!("parameter {name} has {} values, got {}", t.len(), values.len()));
        }
        t.data_mut().copy_from_slice(&values);
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Trainable entries only.
    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.iter().filter(|(k, _)| !k.starts_with(BUFFER_PREFIX))
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().map(|(_, t)| t.len()).sum()
    }

    /// Places every trainable tensor on the graph, tracked when `train` is set.
    pub fn bind(&self, g: &mut Graph, train: bool) -> Bound {
        self.bind_prefix(g, "", train)
    }

    /// Binds only names under `prefix`; with `train` set they are tracked.
    pub fn bind_prefix(&self, g: &mut Graph, prefix: &str, train: bool) -> Bound {
        let vars = self
            .trainable()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, t)| {
                let v = if train { g.param(t.clone()) } else { g.constant(t.clone()) };
                (k.to_string(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Order-independent digest of kind, config and every tensor value.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.kind.as_bytes());
        h.update(self.config_json.as_bytes());
        h.update(self.step.to_le_bytes());
        for (k, t) in &self.tensors {
            h.update(k.as_bytes());
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Graph handles of a bound [`ParameterSet`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::NotFound(format!("parameter {name}")))
    }

    pub fn extend(&mut self, other: Bound) {
        self.vars.extend(other.vars);
    }

    /// Gradient for every bound parameter, zeros where the loss is independent.
    pub fn gradients(&self, g: &Graph, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars.iter().map(|(k, &v)| (k.clone(), grads.get_or_zeros(v, g.shape(v)))).collect()
    }
}
