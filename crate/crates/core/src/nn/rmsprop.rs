use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParameterSet;
use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmspropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        Self { learning_rate: 2e-4, decay: 0.9, epsilon: 1e-8 }
    }
}

impl RmspropConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

/// Squared-gradient accumulators keyed by parameter name.
#[derive(Debug, Clone)]
pub struct RmspropState {
    pub config: RmspropConfig,
    acc: BTreeMap<String, Vec<f64>>,
}

impl RmspropState {
    pub fn new(config: RmspropConfig) -> Self {
        Self { config, acc: BTreeMap::new() }
    }

    pub fn accumulator(&self, name: &str) -> Option<&[f64]> {
        self.acc.get(name).map(Vec::as_slice)
    }
}

/// One update of every parameter named in `grads`.
pub fn rmsprop_step(params: &mut ParameterSet, grads: &BTreeMap<String, Tensor>, state: &mut RmspropState) -> Result<()> {
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(Error::TrainingDiverged(format!("non-finite gradient for {name}")));
        }
    }
    let RmspropConfig { learning_rate, decay, epsilon } = state.config;
    for (name, g) in grads {
        let p = params.get_mut(name).ok_or_else(|| Error::NotFound(format!("parameter {name}")))?;
        if p.shape() != g.shape() {
            return invalid(format!("gradient for {name} has shape {:?}, parameter {:?}", g.shape(), p.shape()));
        }
        let acc = state.acc.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for ((w, a), &gi) in p.data_mut().iter_mut().zip(acc.iter_mut()).zip(g.data()) {
            *a = decay * *a + (1.0 - decay) * gi * gi;
            *w -= learning_rate * gi / (*a + epsilon).sqrt();
        }
    }
    params.set_step(params.step() + 1);
    Ok(())
}

pub(crate) fn check_loss(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::TrainingDiverged(format!("loss {loss} at step {step}")))
    }
}
