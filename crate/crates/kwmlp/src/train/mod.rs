//! Training recipe: AdamW with decoupled weight decay, per-step linear
//! warmup into cosine annealing, label-smoothed cross-entropy, SpecAugment
//! time/frequency masking, stochastic block drop, and the train/eval loops.
//!
//! Batches are processed clip by clip on per-clip tapes with gradient
//! accumulation; the summed, `1/B`-scaled clip losses make the update
//! mathematically identical to a whole-batch backward pass while keeping
//! memory flat. Everything runs single-threaded in a fixed order, so a
//! fixed seed reproduces losses bit for bit.
//!
//! Stochastic draws come from per-purpose streams (shuffle, augmentation,
//! block drop) derived from the run seed and the epoch index; see
//! [`crate::rng`].

mod loops;
mod optim;

pub use loops::{
    evaluate, mixer_default_train_config, train, EpochRow, Network, NetworkVars, TrainOptions,
    TrainOutcome,
};
pub use optim::{adamw_update, AdamW, GradStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::dsp::Mfcc;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

/// SpecAugment settings: number of masks and maximum widths (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecAugment {
    pub time_masks: usize,
    pub time_mask_max: usize,
    pub freq_masks: usize,
    pub freq_mask_max: usize,
}

impl Default for SpecAugment {
    fn default() -> Self {
        SpecAugment {
            time_masks: 2,
            time_mask_max: 25,
            freq_masks: 2,
            freq_mask_max: 7,
        }
    }
}

/// Learning-rate schedule shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// Linear per-step ramp over the warmup epochs, then cosine annealing
    /// to zero over the remaining epochs.
    WarmupCosine,
    /// `base_lr * decay^epoch`, the comparison-experiment schedule.
    Exponential { decay_per_epoch: f64 },
}

/// The full training recipe. Defaults are the standard recipe:
/// 140 epochs, batch 256, AdamW at 1e-3 with weight decay 0.1, 10 warmup
/// epochs then cosine, label smoothing 0.1, block survival 0.9, and
/// 2 time masks (width <= 25) plus 2 frequency masks (width <= 7).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub schedule: Schedule,
    pub weight_decay: f32,
    pub label_smoothing: f64,
    pub block_survival: f64,
    pub augment: SpecAugment,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 140,
            batch_size: 256,
            base_lr: 0.001,
            warmup_epochs: 10,
            schedule: Schedule::WarmupCosine,
            weight_decay: 0.1,
            label_smoothing: 0.1,
            block_survival: 0.9,
            augment: SpecAugment::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be >= 1"));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::config("base_lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config("label_smoothing must be in [0, 1)"));
        }
        if !(self.block_survival > 0.0 && self.block_survival <= 1.0) {
            return Err(Error::config("block_survival must be in (0, 1]"));
        }
        if let Schedule::Exponential { decay_per_epoch } = self.schedule {
            if !(decay_per_epoch > 0.0 && decay_per_epoch <= 1.0) {
                return Err(Error::config("exponential decay must be in (0, 1]"));
            }
        }
        Ok(())
    }
}

/// Learning rate at a global step. Warmup ramps `base_lr*(s+1)/W` over the
/// first `W = warmup_epochs * steps_per_epoch` steps (reaching `base_lr`
/// exactly on the last warmup step); the cosine phase then follows
/// `base_lr * 0.5 * (1 + cos(pi * progress))` down to zero at
/// `epochs * steps_per_epoch`. Runs shorter than the warmup span simply
/// stay on the ramp.
pub fn lr_at(step: u64, steps_per_epoch: u64, cfg: &TrainConfig) -> f64 {
    debug_assert!(steps_per_epoch > 0);
    match cfg.schedule {
        Schedule::WarmupCosine => {
            let warmup = cfg.warmup_epochs as u64 * steps_per_epoch;
            let total = cfg.epochs as u64 * steps_per_epoch;
            if step < warmup {
                cfg.base_lr * (step + 1) as f64 / warmup as f64
            } else if total <= warmup {
                cfg.base_lr
            } else {
                let progress = ((step - warmup) as f64 / (total - warmup) as f64).min(1.0);
                cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
        Schedule::Exponential { decay_per_epoch } => {
            let epoch = (step / steps_per_epoch) as i32;
            cfg.base_lr * decay_per_epoch.powi(epoch)
        }
    }
}

/// Label-smoothed cross-entropy:
/// `mean_batch (1-e) * (-log p_y) + (e/K) * sum_k (-log p_k)`.
///
/// `logits` may be `[K]` (single clip) or `[B, K]`; `targets` must have one
/// id per row, each in `[0, K)`.
pub fn label_smoothed_ce<F: Real>(
    g: &mut Graph<F>,
    logits: Var,
    targets: &[usize],
    smoothing: f64,
) -> Result<Var> {
    let shape = g.value(logits).shape().to_vec();
    let (batch, classes) = match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => {
            return Err(Error::contract(format!(
                "label_smoothed_ce expects rank 1 or 2 logits, got {shape:?}"
            )))
        }
    };
    if targets.len() != batch {
        return Err(Error::contract(format!(
            "{} targets for batch of {batch}",
            targets.len()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::contract(format!(
            "target {bad} out of range for {classes} classes"
        )));
    }
    // Smoothed one-hot weights; constant, so the backward pass only flows
    // through log_softmax.
    let mut weights = vec![F::of(smoothing / classes as f64); batch * classes];
    for (row, &t) in targets.iter().enumerate() {
        weights[row * classes + t] += F::of(1.0 - smoothing);
    }
    let w = g.constant(Tensor::new(shape, weights)?);
    let logp = g.log_softmax_last_axis(logits);
    let weighted = g.mul(logp, w)?;
    let total = g.sum_all(weighted);
    Ok(g.scale(total, -1.0 / batch as f64))
}

pub(crate) fn zero_time_mask(mfcc: &mut Mfcc, offset: usize, width: usize) {
    let (rows, cols) = mfcc.shape();
    debug_assert!(offset + width <= cols);
    for r in 0..rows {
        for c in offset..offset + width {
            mfcc.data_mut()[r * cols + c] = 0.0;
        }
    }
}

pub(crate) fn zero_freq_mask(mfcc: &mut Mfcc, offset: usize, width: usize) {
    let (_, cols) = mfcc.shape();
    for r in offset..offset + width {
        mfcc.data_mut()[r * cols..(r + 1) * cols].fill(0.0);
    }
}

/// Mask the feature matrix in place: for each time mask, a width drawn
/// uniformly from `{0..=time_mask_max}` and an offset uniform over valid
/// positions, zeroing those columns; frequency masks likewise zero rows.
/// Masks may overlap. Width and offset are always drawn (even for width 0)
/// so the stream stays aligned regardless of outcomes.
pub fn spec_augment(mfcc: &mut Mfcc, cfg: &SpecAugment, rng: &mut SplitMix64) {
    let (rows, cols) = mfcc.shape();
    for _ in 0..cfg.time_masks {
        let width = rng.range_inclusive(0, cfg.time_mask_max.min(cols));
        let offset = rng.below(cols - width + 1);
        zero_time_mask(mfcc, offset, width);
    }
    for _ in 0..cfg.freq_masks {
        let width = rng.range_inclusive(0, cfg.freq_mask_max.min(rows));
        let offset = rng.below(rows - width + 1);
        zero_freq_mask(mfcc, offset, width);
    }
}

/// One survival flag per block, independent draws: `true` with probability
/// `survival`. Evaluation never calls this; it uses an all-true mask with
/// no rescaling (a dropped block is a full residual bypass).
pub fn sample_block_mask(blocks: usize, survival: f64, rng: &mut SplitMix64) -> Vec<bool> {
    debug_assert!(survival > 0.0 && survival <= 1.0);
    (0..blocks).map(|_| rng.bernoulli(survival)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn warmup_end_is_exact_and_boundary_is_continuous() {
        let cfg = TrainConfig::default();
        let spe = 334u64; // arbitrary steps per epoch
        let warmup = cfg.warmup_epochs as u64 * spe;
        assert_eq!(lr_at(warmup - 1, spe, &cfg), 0.001);
        assert_eq!(lr_at(warmup, spe, &cfg), 0.001);
        assert!((lr_at(warmup - 1, spe, &cfg) - lr_at(warmup, spe, &cfg)).abs() <= 1e-12);
    }

    #[test]
    fn cosine_midpoint_and_floor() {
        let cfg = TrainConfig::default();
        let spe = 334u64;
        let warmup = cfg.warmup_epochs as u64 * spe;
        let total = cfg.epochs as u64 * spe;
        // Midpoint of the cosine span is epoch 75 for 10 warmup + 140 total.
        let mid = warmup + (total - warmup) / 2;
        assert_eq!(mid, 75 * spe);
        assert!((lr_at(mid, spe, &cfg) - 0.0005).abs() <= 1e-9);
        assert!(lr_at(total, spe, &cfg) <= 1e-8);
        assert!(lr_at(total - 1, spe, &cfg) <= 1e-8);
    }

    #[test]
    fn lr_is_nonnegative_everywhere() {
        let cfg = TrainConfig::default();
        let spe = 7u64;
        for step in 0..cfg.epochs as u64 * spe + 10 {
            assert!(lr_at(step, spe, &cfg) >= 0.0, "step {step}");
        }
    }

    #[test]
    fn exponential_schedule_decays_per_epoch() {
        let cfg = TrainConfig {
            schedule: Schedule::Exponential { decay_per_epoch: 0.985 },
            ..TrainConfig::default()
        };
        let spe = 10u64;
        assert_eq!(lr_at(0, spe, &cfg), 0.001);
        assert_eq!(lr_at(9, spe, &cfg), 0.001);
        assert!((lr_at(10, spe, &cfg) - 0.001 * 0.985).abs() <= 1e-15);
        assert!((lr_at(25, spe, &cfg) - 0.001 * 0.985f64.powi(2)).abs() <= 1e-15);
    }

    fn ce_value(logits: Vec<f64>, targets: &[usize], eps: f64) -> f64 {
        let mut g: Graph<f64> = Graph::new();
        let rows = targets.len();
        let k = logits.len() / rows;
        let shape = if rows == 1 { vec![k] } else { vec![rows, k] };
        let l = g.leaf(Tensor::new(shape, logits).unwrap(), true);
        let loss = label_smoothed_ce(&mut g, l, targets, eps).unwrap();
        g.value(loss).data()[0]
    }

    #[test]
    fn uniform_logits_cost_ln_k_for_any_smoothing() {
        let ln35 = (35f64).ln();
        for eps in [0.0, 0.1, 0.5] {
            let v = ce_value(vec![0.7; 35], &[4], eps);
            assert!((v - ln35).abs() <= 1e-12, "eps {eps}: {v} vs {ln35}");
        }
        assert!((ln35 - 3.5553480614894135).abs() < 1e-12);
    }

    #[test]
    fn zero_smoothing_reduces_to_plain_cross_entropy() {
        let logits = vec![1.5, -0.3, 0.8, 0.0];
        // Plain CE oracle.
        let mx = 1.5f64;
        let z: f64 = logits.iter().map(|v| (v - mx).exp()).sum();
        let want = -(logits[2] - mx - z.ln());
        let got = ce_value(logits, &[2], 0.0);
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }

    #[test]
    fn smoothed_value_matches_direct_summation_oracle() {
        // logits [2, 0, 0, ..., 0] over 35 classes, target 0, eps 0.1.
        let mut logits = vec![0.0f64; 35];
        logits[0] = 2.0;
        let eps = 0.1;
        // Oracle: direct summation of the definition.
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        let logp: Vec<f64> = logits.iter().map(|v| v - z.ln()).collect();
        let mut want = -(1.0 - eps) * logp[0];
        for &lp in &logp {
            want += -(eps / 35.0) * lp;
        }
        let got = ce_value(logits, &[0], eps);
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }

    #[test]
    fn batch_form_averages_rows() {
        let a = vec![1.0, 0.0, -1.0];
        let b = vec![0.2, 0.9, 0.4];
        let mut both = a.clone();
        both.extend_from_slice(&b);
        let va = ce_value(a, &[0], 0.1);
        let vb = ce_value(b, &[2], 0.1);
        let vbatch = ce_value(both, &[0, 2], 0.1);
        assert!((vbatch - 0.5 * (va + vb)).abs() <= 1e-12);
    }

    #[test]
    fn ce_rejects_bad_targets_and_is_bounded_by_smoothed_entropy() {
        let mut g: Graph<f64> = Graph::new();
        let l = g.constant(Tensor::from_vec(vec![0.0; 5]));
        assert!(label_smoothed_ce(&mut g, l, &[7], 0.1).is_err());

        // CE(q, p) = H(q) + KL(q||p) >= H(q) for the smoothed target q.
        let eps = 0.1;
        let k = 5usize;
        let mut q = vec![eps / k as f64; k];
        q[1] += 1.0 - eps;
        let entropy: f64 = -q.iter().map(|&p| p * p.ln()).sum::<f64>();
        for seed in 0..20u64 {
            let mut rng = SplitMix64::new(seed);
            let logits: Vec<f64> = (0..k).map(|_| rng.next_f64() * 6.0 - 3.0).collect();
            let v = ce_value(logits, &[1], eps);
            assert!(v >= entropy - 1e-12, "{v} < {entropy}");
        }
        // Equality is approached at the smoothed distribution's own logits.
        let at_q = ce_value(q.iter().map(|&p| p.ln()).collect(), &[1], eps);
        assert!((at_q - entropy).abs() <= 1e-9);
    }

    #[test]
    fn spec_augment_masks_zero_only_and_respect_shapes() {
        let cfg = SpecAugment::default();
        let base = Mfcc::new(40, 98, (0..40 * 98).map(|i| 1.0 + (i % 7) as f32).collect()).unwrap();
        let mut rng = SplitMix64::new(31);
        for _ in 0..50 {
            let mut masked = base.clone();
            spec_augment(&mut masked, &cfg, &mut rng);
            assert_eq!(masked.shape(), base.shape());
            for (i, (&m, &b)) in masked.data().iter().zip(base.data()).enumerate() {
                assert!(m == 0.0 || m.to_bits() == b.to_bits(), "elem {i} altered to {m}");
            }
        }
    }

    #[test]
    fn zero_width_config_leaves_input_unchanged() {
        let cfg = SpecAugment {
            time_masks: 2,
            time_mask_max: 0,
            freq_masks: 2,
            freq_mask_max: 0,
        };
        let base = Mfcc::new(40, 98, (0..40 * 98).map(|i| i as f32 * 0.01).collect()).unwrap();
        let mut masked = base.clone();
        let mut rng = SplitMix64::new(32);
        spec_augment(&mut masked, &cfg, &mut rng);
        assert_eq!(masked, base);
    }

    #[test]
    fn forced_full_width_time_mask_zeroes_leading_columns() {
        let mut mfcc = Mfcc::new(40, 98, vec![1.0; 40 * 98]).unwrap();
        zero_time_mask(&mut mfcc, 0, 25);
        for c in 0..25 {
            for r in 0..40 {
                assert_eq!(mfcc.at(r, c), 0.0);
            }
        }
        for r in 0..40 {
            assert_eq!(mfcc.at(r, 25), 1.0);
        }
    }

    #[test]
    fn block_mask_statistics_and_edge_cases() {
        let mut rng = SplitMix64::new(33);
        assert_eq!(sample_block_mask(12, 1.0, &mut rng), vec![true; 12]);

        let mut survived = vec![0u32; 12];
        let draws = 100_000;
        for _ in 0..draws {
            for (slot, alive) in survived.iter_mut().zip(sample_block_mask(12, 0.9, &mut rng)) {
                *slot += alive as u32;
            }
        }
        for (block, &s) in survived.iter().enumerate() {
            let rate = s as f64 / draws as f64;
            assert!((rate - 0.9).abs() <= 0.01, "block {block}: {rate}");
        }
    }
}
