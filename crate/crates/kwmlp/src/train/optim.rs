//! AdamW with decoupled weight decay, plus the gradient accumulation buffer
//! used by the per-clip training loop.

use super::loops::Network;
use crate::model::ParamKind;
use crate::tensor::graph::{Graph, Var};
use crate::tensor::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One AdamW update, elementwise over a parameter tensor:
///
/// ```text
/// m <- b1 m + (1-b1) g          v <- b2 v + (1-b2) g^2
/// mhat = m / (1-b1^t)           vhat = v / (1-b2^t)
/// theta <- theta - lr (mhat / (sqrt(vhat) + eps) + wd theta)
/// ```
///
/// The decay term is decoupled (never enters the moments); callers pass
/// `wd = 0` for biases and norm affines.
pub fn adamw_update<F: Real>(
    theta: &mut [F],
    grad: &[F],
    m: &mut [F],
    v: &mut [F],
    t: u64,
    lr: F,
    wd: F,
) {
    debug_assert!(t >= 1);
    debug_assert_eq!(theta.len(), grad.len());
    let b1 = F::of(ADAM_BETA1);
    let b2 = F::of(ADAM_BETA2);
    let one_m_b1 = F::of(1.0 - ADAM_BETA1);
    let one_m_b2 = F::of(1.0 - ADAM_BETA2);
    let eps = F::of(ADAM_EPS);
    let bc1 = F::of(1.0 - ADAM_BETA1.powi(t as i32));
    let bc2 = F::of(1.0 - ADAM_BETA2.powi(t as i32));
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + one_m_b1 * g;
        v[i] = b2 * v[i] + one_m_b2 * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        theta[i] = theta[i] - lr * (mhat / (vhat.sqrt() + eps) + wd * theta[i]);
    }
}

/// Flat gradient accumulator aligned with a network's parameter visit order.
pub struct GradStore {
    slots: Vec<Vec<f32>>,
}

impl GradStore {
    pub fn zeros_like(net: &Network) -> Self {
        let mut slots = Vec::new();
        net.visit(&mut |_, _, t| slots.push(vec![0.0f32; t.len()]));
        GradStore { slots }
    }

    pub fn reset(&mut self) {
        for s in &mut self.slots {
            s.fill(0.0);
        }
    }

    /// Add the gradients accumulated on `vars` (the flat parameter leaves
    /// of one clip's graph) into the buffer. Leaves without a gradient
    /// contribute nothing.
    pub fn accumulate(&mut self, g: &Graph<f32>, vars: &[Var]) {
        debug_assert_eq!(vars.len(), self.slots.len());
        for (slot, &var) in self.slots.iter_mut().zip(vars) {
            if let Some(grad) = g.grad(var) {
                for (acc, &gv) in slot.iter_mut().zip(grad.data()) {
                    *acc += gv;
                }
            }
        }
    }

    pub fn slots(&self) -> &[Vec<f32>] {
        &self.slots
    }
}

/// AdamW state: first/second moments per parameter plus the shared step
/// counter, in the network's visit order.
pub struct AdamW {
    weight_decay: f32,
    t: u64,
    moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl AdamW {
    pub fn new(net: &Network, weight_decay: f32) -> Self {
        let mut moments = Vec::new();
        net.visit(&mut |_, _, t| moments.push((vec![0.0f32; t.len()], vec![0.0f32; t.len()])));
        AdamW {
            weight_decay,
            t: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one optimizer step from accumulated gradients. Weight decay
    /// hits `ParamKind::Weight` tensors only.
    pub fn step(&mut self, net: &mut Network, grads: &GradStore, lr: f32) {
        self.t += 1;
        let t = self.t;
        let wd = self.weight_decay;
        let mut slot = 0usize;
        let moments = &mut self.moments;
        let gslots = grads.slots();
        net.visit_mut(&mut |_, kind, tensor| {
            let (m, v) = &mut moments[slot];
            let decay = if kind == ParamKind::Weight { wd } else { 0.0 };
            adamw_update(tensor.data_mut(), &gslots[slot], m, v, t, lr, decay);
            slot += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_applies_pure_decoupled_decay() {
        let mut theta = [2.0f64, -0.5];
        let grad = [0.0f64; 2];
        let mut m = [0.0f64; 2];
        let mut v = [0.0f64; 2];
        let (lr, wd) = (0.001, 0.1);
        adamw_update(&mut theta, &grad, &mut m, &mut v, 1, lr, wd);
        // Moments stay zero, so the update is exactly -lr*wd*theta.
        assert_eq!(theta[0], 2.0 - lr * (wd * 2.0));
        assert_eq!(theta[1], -0.5 - lr * (wd * -0.5));
        assert!((theta[0] - 2.0 * (1.0 - 1e-4)).abs() <= 1e-15);
        // wd = 0 leaves parameters bit-identical.
        let mut bias = [0.25f64];
        adamw_update(&mut bias, &[0.0], &mut [0.0], &mut [0.0], 1, lr, 0.0);
        assert_eq!(bias[0], 0.25);
    }

    #[test]
    fn first_and_second_steps_match_scalar_trace_oracle() {
        // Scalar step-by-step oracle with the textbook formulas, written
        // independently of the implementation's fused expression.
        let g = 0.37f64;
        let (lr, wd) = (0.001f64, 0.0f64);
        let (b1, b2, eps) = (ADAM_BETA1, ADAM_BETA2, ADAM_EPS);

        let mut want = 1.2f64;
        let mut m_o = 0.0;
        let mut v_o = 0.0;
        for t in 1..=2 {
            m_o = b1 * m_o + (1.0 - b1) * g;
            v_o = b2 * v_o + (1.0 - b2) * g * g;
            let mhat = m_o / (1.0 - b1.powi(t));
            let vhat = v_o / (1.0 - b2.powi(t));
            let adam_term = mhat / (vhat.sqrt() + eps);
            want = want - lr * adam_term - lr * wd * want;
        }

        let mut theta = [1.2f64];
        let mut m = [0.0f64];
        let mut v = [0.0f64];
        adamw_update(&mut theta, &[g], &mut m, &mut v, 1, lr, wd);
        // First step sanity: bias-corrected update is ~ -lr * sign(g).
        let first_expected = 1.2 - lr * g / (g.abs() + eps);
        assert!((theta[0] - first_expected).abs() <= 1e-9, "{}", theta[0]);
        adamw_update(&mut theta, &[g], &mut m, &mut v, 2, lr, wd);
        assert!((theta[0] - want).abs() <= 1e-12, "{} vs {want}", theta[0]);
    }

    #[test]
    fn update_is_odd_in_the_gradient_at_first_step() {
        let (lr, wd) = (0.003f64, 0.0f64);
        let g = 0.8123f64;
        let mut up = [1.0f64];
        adamw_update(&mut up, &[g], &mut [0.0], &mut [0.0], 1, lr, wd);
        let mut down = [1.0f64];
        adamw_update(&mut down, &[-g], &mut [0.0], &mut [0.0], 1, lr, wd);
        let delta_up = up[0] - 1.0;
        let delta_down = down[0] - 1.0;
        assert_eq!(delta_up, -delta_down);
    }
}
