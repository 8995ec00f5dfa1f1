use super::graph::{Graph, Var};
use super::params::{Bound, ParameterSet};
use crate::error::Result;

pub const GRAD_CHECK_EPS: f64 = 1e-5;
/// Denominator floor for the relative error of near-zero gradients.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Worst relative error between the analytic gradient of `loss` and central
/// differences, over every trainable scalar in `params`.
pub fn grad_check<F>(params: &ParameterSet, loss: F) -> Result<f64>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let out = loss(&mut g, &bound)?;
    let grads = g.backward(out)?;
    let analytic = bound.gradients(&g, &grads);

    let eval = |p: &ParameterSet| -> Result<f64> {
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let v = loss(&mut g, &b)?;
        Ok(g.value(v).item())
    };

    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    let names: Vec<String> = params.trainable().map(|(k, _)| k.to_string()).collect();
    for name in names {
        let n = params.get(&name)?.len();
        for i in 0..n {
            let orig = params.get(&name)?.data()[i];
            work.get_mut(&name).expect("present").data_mut()[i] = orig + GRAD_CHECK_EPS;
            let up = eval(&work)?;
            work.get_mut(&name).expect("present").data_mut()[i] = orig - GRAD_CHECK_EPS;
            let down = eval(&work)?;
            work.get_mut(&name).expect("present").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * GRAD_CHECK_EPS);
            let a = analytic[&name].data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
