//! Finite-difference gradient verification.
//!
//! Runs in double precision only: the checker compares tape gradients
//! against central differences with step ~1e-4, which needs ~1e-8 of
//! function accuracy — out of reach for f32.
//!
//! LayerNorm at a constant input is a degenerate point (the normalized
//! value is 0/sqrt(eps) with zero variance, where the function is not
//! smooth in the usual sense); callers must not gradient-check at such
//! inputs. Random continuous inputs avoid the point almost surely.

use super::graph::{Graph, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// A scalar-valued tensor function expressed as graph construction:
/// given a graph and the leaf vars for each input, return the loss var.
pub trait LossFn: Fn(&mut Graph<f64>, &[Var]) -> Result<Var> {}
impl<T: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>> LossFn for T {}

/// Tape gradients of `f` at `inputs`: returns (loss, d loss / d input_i).
pub fn analytic_grads(f: impl LossFn, inputs: &[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    if g.value(loss).len() != 1 {
        return Err(Error::contract(format!(
            "grad_check requires a scalar-valued function, got shape {:?}",
            g.value(loss).shape()
        )));
    }
    g.backward(loss)?;
    let loss_value = g.value(loss).data()[0];
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();
    Ok((loss_value, grads))
}

/// Central-difference gradients of `f` at `inputs` with the given step.
/// `O(step^2)` accurate; every evaluation rebuilds the graph from scratch.
pub fn numeric_grads(
    f: impl LossFn,
    inputs: &[Tensor<f64>],
    step: f64,
) -> Result<Vec<Tensor<f64>>> {
    let eval = |points: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = points.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            grad.data_mut()[j] = (up - down) / (2.0 * step);
        }
        grads.push(grad);
    }
    Ok(grads)
}

/// Max over all coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn max_relative_error(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            let denom = av.abs().max(nv.abs()).max(1e-8);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}

/// Compare tape gradients of `f` against central differences and return
/// the max relative error over every coordinate of every input.
pub fn grad_check(f: impl LossFn, inputs: &[Tensor<f64>], step: f64) -> Result<f64> {
    let (_, analytic) = analytic_grads(&f, inputs)?;
    let numeric = numeric_grads(&f, inputs, step)?;
    Ok(max_relative_error(&analytic, &numeric))
}
