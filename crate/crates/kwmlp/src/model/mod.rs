//! The KW-MLP network: patch embedding, a stack of gated-MLP blocks with
//! Spatial Gating Units, mean pooling and a linear classification head.
//!
//! A 40x98 MFCC is cut into 40x1 patches, one per time step, giving 98
//! tokens of width 40 that a single projection lifts to `dim` = 64. No
//! positional embedding is added: the SGU's token-axis projection is
//! position-dependent and carries that information instead.
//!
//! Each of the 12 blocks expands channels to 256 with GELU, splits the
//! result in half, and gates the first half with a learned projection of
//! the (normalized) second half across the token axis:
//!
//! ```text
//! Z = gelu(X U + b_u)             [98, 256]
//! Z1, Z2 = split(Z)               [98, 128] each
//! gate = S ln(Z2) + b_s           [98, 128]   (S: 98x98, b_s per token)
//! Y = ln((Z1 * gate) V + b_v + X)             post-norm placement
//! ```
//!
//! The gate projection starts near zero with `b_s = 1`, so every block is
//! close to identity at initialization; that keeps the deep post-norm
//! stack trainable. The pre-norm variant (normalize the block input, no
//! output norm) is kept behind [`NormPlacement`] for the comparison
//! experiment. With the default dimensions the model has 424,683
//! parameters and 43,906,240 multiply-accumulates per clip.

pub mod mixer;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::graph::{Graph, Var, LAYER_NORM_EPS};
use crate::tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

/// Reference cost figures for the default configuration, used by the
/// `params --check` / `flops --check` gates.
pub const REFERENCE_PARAMS: usize = 424_000;
pub const REFERENCE_PARAMS_TOLERANCE: f64 = 0.01;
/// MACs, counting one multiply-accumulate as one FLOP.
pub const REFERENCE_MACS: u64 = 45_000_000;
pub const REFERENCE_MACS_TOLERANCE: f64 = 0.10;

/// Where the block LayerNorm sits relative to the residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormPlacement {
    /// Normalize the block output after the residual add (default).
    Post,
    /// Normalize the block input, residual add last.
    Pre,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// MFCC rows (patch height); 40.
    pub f_bins: usize,
    /// Tokens, i.e. MFCC time steps; 98.
    pub n_tokens: usize,
    /// Embedding width d; 64.
    pub dim: usize,
    /// Channel projection width inside a block; 256.
    pub dim_proj: usize,
    pub n_blocks: usize,
    pub n_classes: usize,
    pub norm: NormPlacement,
}

impl ModelConfig {
    pub fn default_kwmlp() -> Self {
        ModelConfig {
            f_bins: 40,
            n_tokens: 98,
            dim: 64,
            dim_proj: 256,
            n_blocks: 12,
            n_classes: 35,
            norm: NormPlacement::Post,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.f_bins == 0
            || self.n_tokens == 0
            || self.dim == 0
            || self.dim_proj == 0
            || self.n_blocks == 0
            || self.n_classes == 0
        {
            return Err(Error::config("model dimensions must all be >= 1"));
        }
        if self.dim_proj % 2 != 0 {
            return Err(Error::config(format!(
                "dim_proj must be even for the split gate, got {}",
                self.dim_proj
            )));
        }
        Ok(())
    }

    /// Channels per gate half: `dim_proj / 2`.
    pub fn gate_width(&self) -> usize {
        self.dim_proj / 2
    }
}

/// What a parameter is, for the optimizer's decay exclusion set: decoupled
/// weight decay applies to `Weight` matrices only, never to biases or norm
/// affines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
}

#[derive(Debug, Clone)]
pub struct PatchEmbedParams {
    /// `[f_bins, dim]` projection applied to each flattened 40x1 patch.
    pub w0: Tensor<f32>,
    pub b0: Tensor<f32>,
}

#[derive(Debug, Clone)]
pub struct SguParams {
    /// LayerNorm affine over the gate half.
    pub norm_gamma: Tensor<f32>,
    pub norm_beta: Tensor<f32>,
    /// `[n_tokens, n_tokens]` projection across the token axis.
    pub s: Tensor<f32>,
    /// Per-token gate bias, initialized to 1.
    pub b_s: Tensor<f32>,
}

#[derive(Debug, Clone)]
pub struct GmlpBlockParams {
    /// `[dim, dim_proj]` channel expansion.
    pub u: Tensor<f32>,
    pub b_u: Tensor<f32>,
    pub sgu: SguParams,
    /// `[dim_proj/2, dim]` channel contraction after the gate.
    pub v: Tensor<f32>,
    pub b_v: Tensor<f32>,
    /// Block LayerNorm affine: output norm under post-norm placement,
    /// input norm under pre-norm.
    pub norm_gamma: Tensor<f32>,
    pub norm_beta: Tensor<f32>,
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embed: PatchEmbedParams,
    pub blocks: Vec<GmlpBlockParams>,
    pub head_w: Tensor<f32>,
    pub head_b: Tensor<f32>,
}

fn uniform_tensor(shape: &[usize], limit: f32, rng: &mut SplitMix64) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_f32(-limit, limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data consistent")
}

impl ModelParams {
    /// Fresh parameters: projections uniform in `+-1/sqrt(fan_in)`, biases
    /// zero, norm affines (1, 0), and the near-identity gate `S ~ +-1e-3/N`,
    /// `b_s = 1`.
    pub fn init(config: ModelConfig, rng: &mut SplitMix64) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let proj = config.dim_proj;
        let half = config.gate_width();
        let n = config.n_tokens;

        let embed = PatchEmbedParams {
            w0: uniform_tensor(&[config.f_bins, d], 1.0 / (config.f_bins as f32).sqrt(), rng),
            b0: Tensor::zeros(&[d]),
        };
        let blocks = (0..config.n_blocks)
            .map(|_| GmlpBlockParams {
                u: uniform_tensor(&[d, proj], 1.0 / (d as f32).sqrt(), rng),
                b_u: Tensor::zeros(&[proj]),
                sgu: SguParams {
                    norm_gamma: Tensor::full(&[half], 1.0),
                    norm_beta: Tensor::zeros(&[half]),
                    s: uniform_tensor(&[n, n], 1e-3 / n as f32, rng),
                    b_s: Tensor::full(&[n], 1.0),
                },
                v: uniform_tensor(&[half, d], 1.0 / (half as f32).sqrt(), rng),
                b_v: Tensor::zeros(&[d]),
                norm_gamma: Tensor::full(&[d], 1.0),
                norm_beta: Tensor::zeros(&[d]),
            })
            .collect();
        let head_w = uniform_tensor(&[d, config.n_classes], 1.0 / (d as f32).sqrt(), rng);
        let head_b = Tensor::zeros(&[config.n_classes]);
        Ok(ModelParams {
            config,
            embed,
            blocks,
            head_w,
            head_b,
        })
    }

    /// Visit every parameter in a fixed order (the order checkpoints,
    /// optimizer slots, and graph insertion all share).
    pub fn visit(&self, f: &mut impl FnMut(&str, ParamKind, &Tensor<f32>)) {
        f("embed.w0", ParamKind::Weight, &self.embed.w0);
        f("embed.b0", ParamKind::Bias, &self.embed.b0);
        for (i, b) in self.blocks.iter().enumerate() {
            f(&format!("blocks.{i}.u"), ParamKind::Weight, &b.u);
            f(&format!("blocks.{i}.b_u"), ParamKind::Bias, &b.b_u);
            f(&format!("blocks.{i}.sgu.norm_gamma"), ParamKind::Norm, &b.sgu.norm_gamma);
            f(&format!("blocks.{i}.sgu.norm_beta"), ParamKind::Norm, &b.sgu.norm_beta);
            f(&format!("blocks.{i}.sgu.s"), ParamKind::Weight, &b.sgu.s);
            f(&format!("blocks.{i}.sgu.b_s"), ParamKind::Bias, &b.sgu.b_s);
            f(&format!("blocks.{i}.v"), ParamKind::Weight, &b.v);
            f(&format!("blocks.{i}.b_v"), ParamKind::Bias, &b.b_v);
            f(&format!("blocks.{i}.norm_gamma"), ParamKind::Norm, &b.norm_gamma);
            f(&format!("blocks.{i}.norm_beta"), ParamKind::Norm, &b.norm_beta);
        }
        f("head.w", ParamKind::Weight, &self.head_w);
        f("head.b", ParamKind::Bias, &self.head_b);
    }

    /// Mutable visit in the same order as [`ModelParams::visit`].
    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, ParamKind, &mut Tensor<f32>)) {
        f("embed.w0", ParamKind::Weight, &mut self.embed.w0);
        f("embed.b0", ParamKind::Bias, &mut self.embed.b0);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(&format!("blocks.{i}.u"), ParamKind::Weight, &mut b.u);
            f(&format!("blocks.{i}.b_u"), ParamKind::Bias, &mut b.b_u);
            f(&format!("blocks.{i}.sgu.norm_gamma"), ParamKind::Norm, &mut b.sgu.norm_gamma);
            f(&format!("blocks.{i}.sgu.norm_beta"), ParamKind::Norm, &mut b.sgu.norm_beta);
            f(&format!("blocks.{i}.sgu.s"), ParamKind::Weight, &mut b.sgu.s);
            f(&format!("blocks.{i}.sgu.b_s"), ParamKind::Bias, &mut b.sgu.b_s);
            f(&format!("blocks.{i}.v"), ParamKind::Weight, &mut b.v);
            f(&format!("blocks.{i}.b_v"), ParamKind::Bias, &mut b.b_v);
            f(&format!("blocks.{i}.norm_gamma"), ParamKind::Norm, &mut b.norm_gamma);
            f(&format!("blocks.{i}.norm_beta"), ParamKind::Norm, &mut b.norm_beta);
        }
        f("head.w", ParamKind::Weight, &mut self.head_w);
        f("head.b", ParamKind::Bias, &mut self.head_b);
    }
}

// ---- graph-side parameter handles ------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SguVars {
    pub norm_gamma: Var,
    pub norm_beta: Var,
    pub s: Var,
    pub b_s: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub u: Var,
    pub b_u: Var,
    pub sgu: SguVars,
    pub v: Var,
    pub b_v: Var,
    pub norm_gamma: Var,
    pub norm_beta: Var,
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub embed_w0: Var,
    pub embed_b0: Var,
    pub blocks: Vec<BlockVars>,
    pub head_w: Var,
    pub head_b: Var,
}

impl ModelVars {
    /// Vars in [`ModelParams::visit`] order, for grad readout.
    pub fn flat(&self) -> Vec<Var> {
        let mut out = vec![self.embed_w0, self.embed_b0];
        for b in &self.blocks {
            out.extend([
                b.u,
                b.b_u,
                b.sgu.norm_gamma,
                b.sgu.norm_beta,
                b.sgu.s,
                b.sgu.b_s,
                b.v,
                b.b_v,
                b.norm_gamma,
                b.norm_beta,
            ]);
        }
        out.extend([self.head_w, self.head_b]);
        out
    }
}

/// Insert every parameter into `g` (converted to the graph's precision) as
/// leaves; `trainable` controls whether they accumulate gradients.
pub fn insert_params<F: Real>(params: &ModelParams, g: &mut Graph<F>, trainable: bool) -> ModelVars {
    let mut t = |x: &Tensor<f32>| g.leaf(x.to_precision::<F>(), trainable);
    let embed_w0 = t(&params.embed.w0);
    let embed_b0 = t(&params.embed.b0);
    let blocks = params
        .blocks
        .iter()
        .map(|b| BlockVars {
            u: t(&b.u),
            b_u: t(&b.b_u),
            sgu: SguVars {
                norm_gamma: t(&b.sgu.norm_gamma),
                norm_beta: t(&b.sgu.norm_beta),
                s: t(&b.sgu.s),
                b_s: t(&b.sgu.b_s),
            },
            v: t(&b.v),
            b_v: t(&b.b_v),
            norm_gamma: t(&b.norm_gamma),
            norm_beta: t(&b.norm_beta),
        })
        .collect();
    let head_w = t(&params.head_w);
    let head_b = t(&params.head_b);
    ModelVars {
        embed_w0,
        embed_b0,
        blocks,
        head_w,
        head_b,
    }
}

// ---- forward ----------------------------------------------------------------

/// Project each 40x1 MFCC column to a `dim`-wide token:
/// row i of the output is `b0 + mfcc[:, i] . W0`.
pub fn patch_embed<F: Real>(g: &mut Graph<F>, mfcc: Var, w0: Var, b0: Var) -> Result<Var> {
    let (f_bins, _) = g.value(mfcc).dims2()?;
    let (w_rows, _) = g.value(w0).dims2()?;
    if f_bins != w_rows {
        return Err(Error::dimension(
            "patch_embed",
            g.value(mfcc).shape(),
            g.value(w0).shape(),
        ));
    }
    let tokens = g.transpose2d(mfcc)?;
    let proj = g.matmul(tokens, w0)?;
    g.bias_add(proj, b0)
}

/// Spatial Gating Unit. Splits the channels of `z` in half, projects the
/// normalized second half across the token axis, and multiplies the result
/// into the first half:
/// `gate[:, c] = S ln(Z2)[:, c] + b_s`, output `Z1 * gate`.
///
/// At initialization (`S = 0`, `b_s = 1`) the gate is exactly one, so the
/// unit passes `Z1` through bitwise.
pub fn sgu<F: Real>(g: &mut Graph<F>, z: Var, p: &SguVars, eps: f64) -> Result<Var> {
    let (z1, z2) = g.split_last_axis(z)?;
    let normed = g.layer_norm(z2, p.norm_gamma, p.norm_beta, eps)?;
    let projected = g.matmul(p.s, normed)?;
    // b_s biases tokens (rows); route through transposes to reuse the
    // last-axis bias op.
    let t = g.transpose2d(projected)?;
    let biased = g.bias_add(t, p.b_s)?;
    let gate = g.transpose2d(biased)?;
    g.mul(z1, gate)
}

/// One gated-MLP block. `active = false` is the stochastic-depth bypass:
/// the input passes through untouched (no rescaling at evaluation either).
pub fn gmlp_block<F: Real>(
    g: &mut Graph<F>,
    x: Var,
    p: &BlockVars,
    active: bool,
    norm: NormPlacement,
    eps: f64,
) -> Result<Var> {
    if !active {
        return Ok(x);
    }
    let body_input = match norm {
        NormPlacement::Post => x,
        NormPlacement::Pre => g.layer_norm(x, p.norm_gamma, p.norm_beta, eps)?,
    };
    let h = g.matmul(body_input, p.u)?;
    let h = g.bias_add(h, p.b_u)?;
    let z = g.gelu(h);
    let gated = sgu(g, z, &p.sgu, eps)?;
    let out = g.matmul(gated, p.v)?;
    let out = g.bias_add(out, p.b_v)?;
    let res = g.add(out, x)?;
    match norm {
        NormPlacement::Post => g.layer_norm(res, p.norm_gamma, p.norm_beta, eps),
        NormPlacement::Pre => Ok(res),
    }
}

/// Full forward pass: patch embedding, the block stack under `block_mask`,
/// mean pooling over tokens, and the classification head. Returns the
/// `[n_classes]` logits var.
pub fn forward<F: Real>(
    g: &mut Graph<F>,
    vars: &ModelVars,
    config: &ModelConfig,
    mfcc: Var,
    block_mask: &[bool],
) -> Result<Var> {
    if block_mask.len() != config.n_blocks {
        return Err(Error::contract(format!(
            "block_mask has {} flags for {} blocks",
            block_mask.len(),
            config.n_blocks
        )));
    }
    if g.value(mfcc).shape() != [config.f_bins, config.n_tokens] {
        return Err(Error::dimension(
            "forward input",
            g.value(mfcc).shape(),
            &[config.f_bins, config.n_tokens],
        ));
    }
    let mut x = patch_embed(g, mfcc, vars.embed_w0, vars.embed_b0)?;
    for (block, &active) in vars.blocks.iter().zip(block_mask) {
        x = gmlp_block(g, x, block, active, config.norm, LAYER_NORM_EPS)?;
    }
    let pooled = g.mean_over_axis(x, 0)?;
    let row = g.reshape(pooled, &[1, config.dim])?;
    let logits = g.matmul(row, vars.head_w)?;
    let logits = g.bias_add(logits, vars.head_b)?;
    g.reshape(logits, &[config.n_classes])
}

/// Inference convenience: fresh graph, all blocks active, f32 logits out.
pub fn logits(params: &ModelParams, feature: &Tensor<f32>) -> Result<Vec<f32>> {
    let mut g: Graph<f32> = Graph::new();
    let vars = insert_params(params, &mut g, false);
    let input = g.constant(feature.clone());
    let mask = vec![true; params.config.n_blocks];
    let out = forward(&mut g, &vars, &params.config, input, &mask)?;
    Ok(g.value(out).data().to_vec())
}

/// Reassemble [`ModelVars`] from leaves laid out in [`ModelParams::visit`]
/// order.
pub fn vars_from_flat(config: &ModelConfig, flat: &[Var]) -> ModelVars {
    let mut it = flat.iter().copied();
    let mut next = || it.next().expect("flat var list too short for config");
    let embed_w0 = next();
    let embed_b0 = next();
    let blocks = (0..config.n_blocks)
        .map(|_| BlockVars {
            u: next(),
            b_u: next(),
            sgu: SguVars {
                norm_gamma: next(),
                norm_beta: next(),
                s: next(),
                b_s: next(),
            },
            v: next(),
            b_v: next(),
            norm_gamma: next(),
            norm_beta: next(),
        })
        .collect();
    ModelVars {
        embed_w0,
        embed_b0,
        blocks,
        head_w: next(),
        head_b: next(),
    }
}

/// Double-precision finite-difference check of the full forward pass plus a
/// label-smoothed cross-entropy loss, over every parameter and the input.
/// Returns the max relative error; intended for toy-scale configs.
pub fn gradient_check(config: &ModelConfig, seed: u64, step: f64) -> Result<f64> {
    config.validate()?;
    let mut rng = SplitMix64::new(seed);
    let params = ModelParams::init(config.clone(), &mut rng)?;
    let n = config.f_bins * config.n_tokens;
    let feature = Tensor::<f64>::new(
        vec![config.f_bins, config.n_tokens],
        (0..n).map(|_| rng.next_f64() * 4.0 - 2.0).collect(),
    )?;
    let target = rng.below(config.n_classes);

    let mut inputs: Vec<Tensor<f64>> = vec![feature];
    params.visit(&mut |_, _, t| inputs.push(t.to_precision::<f64>()));

    let cfg = config.clone();
    crate::tensor::gradcheck::grad_check(
        move |g, vars| {
            let model_vars = vars_from_flat(&cfg, &vars[1..]);
            let logits = forward(g, &model_vars, &cfg, vars[0], &vec![true; cfg.n_blocks])?;
            let row = g.reshape(logits, &[1, cfg.n_classes])?;
            let logp = g.log_softmax_last_axis(row);
            let k = cfg.n_classes;
            let eps = 0.1;
            let mut w = vec![eps / k as f64; k];
            w[target] += 1.0 - eps;
            let wv = g.constant(Tensor::new(vec![1, k], w)?);
            let weighted = g.mul(logp, wv)?;
            let total = g.sum_all(weighted);
            // Eighth-scale loss: verifies the same Jacobians while keeping
            // saturated (effectively-zero-gradient) coordinates safely under
            // the checker's 1e-8 absolute floor, where finite differences
            // only resolve ~1e-12 of absolute agreement.
            Ok(g.scale(total, -0.01))
        },
        &inputs,
        step,
    )
}

// ---- cost counters ----------------------------------------------------------

/// MACs of one `[m,k] x [k,n]` matmul.
pub fn matmul_macs(m: usize, k: usize, n: usize) -> u64 {
    (m as u64) * (k as u64) * (n as u64)
}

#[derive(Debug, Clone)]
pub struct ParamCount {
    pub total: usize,
    /// (component, scalars) rows: embed, one per block with sub-parts, head.
    pub breakdown: Vec<(String, usize)>,
}

/// Exact scalar count per component. Structure-only: follows shapes, never
/// values.
pub fn count_params(params: &ModelParams) -> ParamCount {
    let mut embed = 0usize;
    let mut head = 0usize;
    let mut per_block: Vec<[usize; 4]> = vec![[0; 4]; params.config.n_blocks];
    params.visit(&mut |name, _, t| {
        if let Some(rest) = name.strip_prefix("blocks.") {
            let (idx, field) = rest.split_once('.').expect("block param name");
            let i: usize = idx.parse().expect("block index");
            let slot = if field == "u" || field == "b_u" {
                0
            } else if field.starts_with("sgu.") {
                1
            } else if field == "v" || field == "b_v" {
                2
            } else {
                3
            };
            per_block[i][slot] += t.len();
        } else if name.starts_with("embed.") {
            embed += t.len();
        } else {
            head += t.len();
        }
    });
    let mut breakdown = vec![("embed".to_string(), embed)];
    let mut total = embed;
    for (i, [u, sgu, v, norm]) in per_block.iter().enumerate() {
        let block = u + sgu + v + norm;
        breakdown.push((format!("block {i} (U {u} + SGU {sgu} + V {v} + norm {norm})"), block));
        total += block;
    }
    breakdown.push(("head".to_string(), head));
    total += head;
    ParamCount { total, breakdown }
}

/// Multiply-accumulates for one forward pass (one MAC counted as one FLOP).
/// Counts every matmul: the patch embedding, each block's U, per-channel S
/// and V projections, and the head.
pub fn count_macs(config: &ModelConfig) -> u64 {
    let n = config.n_tokens;
    let d = config.dim;
    let proj = config.dim_proj;
    let half = config.gate_width();
    let embed = matmul_macs(n, config.f_bins, d);
    let per_block = matmul_macs(n, d, proj)   // U
        + matmul_macs(n, n, half)             // S, all channels
        + matmul_macs(n, half, d); // V
    let head = matmul_macs(1, d, config.n_classes);
    embed + config.n_blocks as u64 * per_block + head
}
