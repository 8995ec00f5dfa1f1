//! Reverse-mode autodiff over dense `f64` tensors, the layer inventory of
//! the four generative models, RMSprop and checkpoint I/O.

pub mod checkpoint;
mod gradcheck;
mod graph;
pub mod layers;
mod params;
mod rmsprop;
mod tensor;

pub use gradcheck::{grad_check, GRAD_CHECK_EPS, GRAD_CHECK_FLOOR};
pub use graph::{ConvSpec, Gradients, Graph, Var};
pub use layers::{layer_forward, BatchNormMode, LayerKind};
pub use params::{Bound, ParameterSet, BUFFER_PREFIX};
pub use rmsprop::{rmsprop_step, RmspropConfig, RmspropState};
pub(crate) use rmsprop::check_loss;
pub use tensor::Tensor;
pub(crate) use graph::{log_sum_exp, sigmoid, softmax_in_place};

/// Sum of `x` weighted by a fixed pseudo-random pattern; a generic scalar
/// probe for gradient checks.
pub fn probe_loss(g: &mut Graph, x: Var, seed: u64) -> crate::Result<Var> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = g.value(x).len();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = g.mul_const(x, std::rc::Rc::new(w))?;
    Ok(g.sum(y))
}
