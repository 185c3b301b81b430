//! Reverse-mode automatic differentiation on a tape of tensor operations.
//!
//! A [`Graph`] owns every tensor produced during a forward pass. Operations
//! append nodes in topological order (each operand precedes its consumer),
//! and [`Graph::backward`] traverses the records exactly once in reverse,
//! accumulating gradients on every node that requires them. A graph is
//! single-use: build forward, call `backward` once, read gradients.
//!
//! GELU uses the tanh approximation
//! `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`, which stays within
//! 1e-3 absolute of the exact erf form everywhere (worst case ~3e-4 near
//! |x| ≈ 2). LayerNorm uses the biased (divide-by-d) variance with the
//! epsilon inside the square root.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Default LayerNorm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Handle to a node in a [`Graph`]. Only valid for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    BiasAdd(Var, Var),
    SplitLo(Var),
    SplitHi(Var),
    ConcatLastAxis(Var, Var),
    Transpose2d(Var),
    MeanOverAxis(Var, usize),
    SoftmaxLastAxis(Var),
    LogSoftmaxLastAxis(Var),
    SumAll(Var),
    Reshape(Var),
}

struct Node<F: Real> {
    value: Tensor<F>,
    grad: Option<Tensor<F>>,
    requires_grad: bool,
    op: Op,
}

/// Tape of recorded operations plus the tensors they produced.
pub struct Graph<F: Real> {
    nodes: Vec<Node<F>>,
    backward_done: bool,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    /// Insert a leaf tensor. Gradients are accumulated on it during
    /// `backward` iff `requires_grad` is true.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Insert a non-differentiable constant.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if one was computed.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- operations ------------------------------------------------------

    /// `C[i,j] = sum_p A[i,p] B[p,j]` for rank-2 operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.value(a).dims2()?;
        let (kb, n) = self.value(b).dims2()?;
        if ka != kb {
            return Err(Error::dimension(
                "matmul",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let data = matmul_nn(self.value(a).data(), self.value(b).data(), m, ka, n);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(out, self.needs_grad(&[a, b]), Op::Matmul(a, b)))
    }

    /// Elementwise GELU (tanh approximation, see module docs).
    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| gelu_value(v)).collect();
        let out = Tensor {
            shape: self.value(x).shape().to_vec(),
            data,
        };
        let rg = self.needs_grad(&[x]);
        self.push(out, rg, Op::Gelu(x))
    }

    /// Per-last-axis-slice normalization with the biased variance:
    /// `(x - mean) / sqrt(var + eps) * gamma + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (_, d) = self.value(x).last_axis_view();
        if self.value(gamma).shape() != [d] {
            return Err(Error::dimension(
                "layer_norm gamma",
                self.value(x).shape(),
                self.value(gamma).shape(),
            ));
        }
        if self.value(beta).shape() != [d] {
            return Err(Error::dimension(
                "layer_norm beta",
                self.value(x).shape(),
                self.value(beta).shape(),
            ));
        }
        if eps <= 0.0 {
            return Err(Error::contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let out = layer_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps);
        let rg = self.needs_grad(&[x, gamma, beta]);
        Ok(self.push(out, rg, Op::LayerNorm { x, gamma, beta, eps }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let out = Tensor {
            shape: self.value(a).shape().to_vec(),
            data,
        };
        Ok(self.push(out, self.needs_grad(&[a, b]), Op::Add(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let out = Tensor {
            shape: self.value(a).shape().to_vec(),
            data,
        };
        Ok(self.push(out, self.needs_grad(&[a, b]), Op::Mul(a, b)))
    }

    /// Multiply every element by the constant `c`.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let cf = F::of(c);
        let data = self.value(x).data().iter().map(|&v| v * cf).collect();
        let out = Tensor {
            shape: self.value(x).shape().to_vec(),
            data,
        };
        let rg = self.needs_grad(&[x]);
        self.push(out, rg, Op::Scale(x, c))
    }

    /// Broadcast-add `bias` (length = last dim) over the last axis.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, d) = self.value(x).last_axis_view();
        if self.value(bias).shape() != [d] {
            return Err(Error::dimension(
                "bias_add",
                self.value(x).shape(),
                self.value(bias).shape(),
            ));
        }
        let xv = self.value(x).data();
        let bv = self.value(bias).data();
        let mut data = Vec::with_capacity(xv.len());
        for r in 0..rows {
            for j in 0..d {
                data.push(xv[r * d + j] + bv[j]);
            }
        }
        let out = Tensor {
            shape: self.value(x).shape().to_vec(),
            data,
        };
        Ok(self.push(out, self.needs_grad(&[x, bias]), Op::BiasAdd(x, bias)))
    }

    /// Split the last axis (which must be even) into two equal halves.
    pub fn split_last_axis(&mut self, x: Var) -> Result<(Var, Var)> {
        let (rows, d) = self.value(x).last_axis_view();
        if d % 2 != 0 {
            return Err(Error::contract(format!(
                "split_last_axis requires an even last dim, got shape {:?}",
                self.value(x).shape()
            )));
        }
        let h = d / 2;
        let xv = self.value(x).data();
        let mut lo = Vec::with_capacity(rows * h);
        let mut hi = Vec::with_capacity(rows * h);
        for r in 0..rows {
            lo.extend_from_slice(&xv[r * d..r * d + h]);
            hi.extend_from_slice(&xv[r * d + h..(r + 1) * d]);
        }
        let mut shape = self.value(x).shape().to_vec();
        *shape.last_mut().unwrap() = h;
        let rg = self.needs_grad(&[x]);
        let lo = self.push(Tensor { shape: shape.clone(), data: lo }, rg, Op::SplitLo(x));
        let hi = self.push(Tensor { shape, data: hi }, rg, Op::SplitHi(x));
        Ok((lo, hi))
    }

    /// Concatenate along the last axis. Inverse of [`Graph::split_last_axis`].
    pub fn concat_last_axis(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, da) = self.value(a).last_axis_view();
        let (rb, db) = self.value(b).last_axis_view();
        let lead_a = &self.value(a).shape()[..self.value(a).rank() - 1];
        let lead_b = &self.value(b).shape()[..self.value(b).rank() - 1];
        if lead_a != lead_b || ra != rb {
            return Err(Error::dimension(
                "concat_last_axis",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for r in 0..ra {
            data.extend_from_slice(&av[r * da..(r + 1) * da]);
            data.extend_from_slice(&bv[r * db..(r + 1) * db]);
        }
        let mut shape = self.value(a).shape().to_vec();
        *shape.last_mut().unwrap() = da + db;
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Tensor { shape, data }, rg, Op::ConcatLastAxis(a, b)))
    }

    pub fn transpose2d(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        let out = transpose(self.value(x).data(), m, n);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![n, m],
                data: out,
            },
            rg,
            Op::Transpose2d(x),
        ))
    }

    /// Mean of a rank-2 tensor over `axis`, producing a rank-1 tensor.
    pub fn mean_over_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if axis > 1 {
            return Err(Error::contract(format!("mean_over_axis: axis {axis} out of range")));
        }
        let xv = self.value(x).data();
        let out = if axis == 0 {
            let inv = F::of(1.0 / m as f64);
            let mut acc = vec![F::zero(); n];
            for r in 0..m {
                for j in 0..n {
                    acc[j] += xv[r * n + j];
                }
            }
            acc.iter_mut().for_each(|v| *v = *v * inv);
            Tensor {
                shape: vec![n],
                data: acc,
            }
        } else {
            let inv = F::of(1.0 / n as f64);
            let data = (0..m)
                .map(|r| {
                    let mut s = F::zero();
                    for j in 0..n {
                        s += xv[r * n + j];
                    }
                    s * inv
                })
                .collect();
            Tensor {
                shape: vec![m],
                data,
            }
        };
        let rg = self.needs_grad(&[x]);
        Ok(self.push(out, rg, Op::MeanOverAxis(x, axis)))
    }

    /// Shift-stabilized softmax over the last axis.
    pub fn softmax_last_axis(&mut self, x: Var) -> Var {
        let out = softmax_forward(self.value(x));
        let rg = self.needs_grad(&[x]);
        self.push(out, rg, Op::SoftmaxLastAxis(x))
    }

    /// Shift-stabilized log-softmax over the last axis.
    pub fn log_softmax_last_axis(&mut self, x: Var) -> Var {
        let (rows, d) = self.value(x).last_axis_view();
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(xv.len());
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mx = row.iter().fold(row[0], |a, &b| a.max(b));
            let mut lse = F::zero();
            for &v in row {
                lse += (v - mx).exp();
            }
            let lse = lse.ln() + mx;
            for &v in row {
                data.push(v - lse);
            }
        }
        let out = Tensor {
            shape: self.value(x).shape().to_vec(),
            data,
        };
        let rg = self.needs_grad(&[x]);
        self.push(out, rg, Op::LogSoftmaxLastAxis(x))
    }

    /// Sum of all elements, as a `[1]`-shaped scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut s = F::zero();
        for &v in self.value(x).data() {
            s += v;
        }
        let rg = self.needs_grad(&[x]);
        self.push(Tensor::scalar(s), rg, Op::SumAll(x))
    }

    /// Reinterpret the row-major data under a new shape of equal size.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || numel != self.value(x).len() {
            return Err(Error::dimension("reshape", self.value(x).shape(), shape));
        }
        let out = Tensor {
            shape: shape.to_vec(),
            data: self.value(x).data().to_vec(),
        };
        let rg = self.needs_grad(&[x]);
        Ok(self.push(out, rg, Op::Reshape(x)))
    }

    // ---- backward --------------------------------------------------------

    /// Accumulate `d loss / d leaf` on every `requires_grad` node reachable
    /// from `loss`. `loss` must be scalar and tape-connected to at least one
    /// differentiable leaf; a second call on the same graph is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::contract(
                "backward already ran on this tape; build a new graph to differentiate again",
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::contract(
                "loss is detached: no differentiable leaf feeds it",
            ));
        }
        self.backward_done = true;
        let seed_shape = self.nodes[loss.0].value.shape().to_vec();
        self.nodes[loss.0].grad = Some(Tensor::full(&seed_shape, F::one()));

        for id in (0..=loss.0).rev() {
            if self.nodes[id].grad.is_none() {
                continue;
            }
            let op = self.nodes[id].op;
            if matches!(op, Op::Leaf) {
                continue;
            }
            let g = self.nodes[id].grad.clone().expect("checked above");
            self.propagate(id, op, &g);
        }
        Ok(())
    }

    fn propagate(&mut self, out_id: usize, op: Op, g: &Tensor<F>) {
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = self.value(a).dims2().expect("checked at record time");
                let n = self.value(b).shape()[1];
                if self.wants(a) {
                    let da = matmul_nt(g.data(), self.value(b).data(), m, n, k);
                    self.accumulate(a, &da);
                }
                if self.wants(b) {
                    let db = matmul_tn(self.value(a).data(), g.data(), m, k, n);
                    self.accumulate(b, &db);
                }
            }
            Op::Gelu(x) => {
                if self.wants(x) {
                    let dx: Vec<F> = self
                        .value(x)
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| gv * gelu_derivative(v))
                        .collect();
                    self.accumulate(x, &dx);
                }
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (dx, dgamma, dbeta) = layer_norm_backward(
                    self.value(x),
                    self.value(gamma),
                    g,
                    eps,
                    self.wants(x),
                );
                if self.wants(x) {
                    self.accumulate(x, &dx);
                }
                if self.wants(gamma) {
                    self.accumulate(gamma, &dgamma);
                }
                if self.wants(beta) {
                    self.accumulate(beta, &dbeta);
                }
            }
            Op::Add(a, b) => {
                if self.wants(a) {
                    self.accumulate(a, g.data());
                }
                if self.wants(b) {
                    self.accumulate(b, g.data());
                }
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    let da = zip_map(g.data(), self.value(b).data(), |x, y| x * y);
                    self.accumulate(a, &da);
                }
                if self.wants(b) {
                    let db = zip_map(g.data(), self.value(a).data(), |x, y| x * y);
                    self.accumulate(b, &db);
                }
            }
            Op::Scale(x, c) => {
                if self.wants(x) {
                    let cf = F::of(c);
                    let dx: Vec<F> = g.data().iter().map(|&v| v * cf).collect();
                    self.accumulate(x, &dx);
                }
            }
            Op::BiasAdd(x, bias) => {
                if self.wants(x) {
                    self.accumulate(x, g.data());
                }
                if self.wants(bias) {
                    let (rows, d) = g.last_axis_view();
                    let mut db = vec![F::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            db[j] += g.data()[r * d + j];
                        }
                    }
                    self.accumulate(bias, &db);
                }
            }
            Op::SplitLo(x) | Op::SplitHi(x) => {
                if self.wants(x) {
                    let (rows, h) = g.last_axis_view();
                    let d = 2 * h;
                    let offset = if matches!(op, Op::SplitLo(_)) { 0 } else { h };
                    let mut dx = vec![F::zero(); rows * d];
                    for r in 0..rows {
                        for j in 0..h {
                            dx[r * d + offset + j] = g.data()[r * h + j];
                        }
                    }
                    self.accumulate(x, &dx);
                }
            }
            Op::ConcatLastAxis(a, b) => {
                let (_, da) = self.value(a).last_axis_view();
                let (rows, d) = g.last_axis_view();
                if self.wants(a) {
                    let mut ga = Vec::with_capacity(rows * da);
                    for r in 0..rows {
                        ga.extend_from_slice(&g.data()[r * d..r * d + da]);
                    }
                    self.accumulate(a, &ga);
                }
                if self.wants(b) {
                    let db = d - da;
                    let mut gb = Vec::with_capacity(rows * db);
                    for r in 0..rows {
                        gb.extend_from_slice(&g.data()[r * d + da..(r + 1) * d]);
                    }
                    self.accumulate(b, &gb);
                }
            }
            Op::Transpose2d(x) => {
                if self.wants(x) {
                    let (gn, gm) = g.dims2().expect("transpose output is rank 2");
                    let dx = transpose(g.data(), gn, gm);
                    self.accumulate(x, &dx);
                }
            }
            Op::MeanOverAxis(x, axis) => {
                if self.wants(x) {
                    let (m, n) = self.value(x).dims2().expect("checked at record time");
                    let mut dx = vec![F::zero(); m * n];
                    if axis == 0 {
                        let inv = F::of(1.0 / m as f64);
                        for r in 0..m {
                            for j in 0..n {
                                dx[r * n + j] = g.data()[j] * inv;
                            }
                        }
                    } else {
                        let inv = F::of(1.0 / n as f64);
                        for r in 0..m {
                            for j in 0..n {
                                dx[r * n + j] = g.data()[r] * inv;
                            }
                        }
                    }
                    self.accumulate(x, &dx);
                }
            }
            Op::SoftmaxLastAxis(x) => {
                if self.wants(x) {
                    let y = &self.nodes[out_id].value;
                    let (rows, d) = y.last_axis_view();
                    let mut dx = vec![F::zero(); rows * d];
                    for r in 0..rows {
                        let yr = &y.data()[r * d..(r + 1) * d];
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let mut dot = F::zero();
                        for j in 0..d {
                            dot += yr[j] * gr[j];
                        }
                        for j in 0..d {
                            dx[r * d + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    self.accumulate(x, &dx);
                }
            }
            Op::LogSoftmaxLastAxis(x) => {
                if self.wants(x) {
                    let y = &self.nodes[out_id].value;
                    let (rows, d) = y.last_axis_view();
                    let mut dx = vec![F::zero(); rows * d];
                    for r in 0..rows {
                        let yr = &y.data()[r * d..(r + 1) * d];
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let mut gsum = F::zero();
                        for j in 0..d {
                            gsum += gr[j];
                        }
                        for j in 0..d {
                            dx[r * d + j] = gr[j] - yr[j].exp() * gsum;
                        }
                    }
                    self.accumulate(x, &dx);
                }
            }
            Op::SumAll(x) => {
                if self.wants(x) {
                    let gv = g.data()[0];
                    let dx = vec![gv; self.value(x).len()];
                    self.accumulate(x, &dx);
                }
            }
            Op::Reshape(x) => {
                if self.wants(x) {
                    self.accumulate(x, g.data());
                }
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&mut self, v: Var, contribution: &[F]) {
        let node = &mut self.nodes[v.0];
        debug_assert_eq!(node.value.len(), contribution.len());
        let grad = node
            .grad
            .get_or_insert_with(|| Tensor::zeros(node.value.shape()));
        for (g, &c) in grad.data_mut().iter_mut().zip(contribution) {
            *g += c;
        }
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dimension(op, self.value(a).shape(), self.value(b).shape()));
        }
        Ok(())
    }
}

// ---- kernels --------------------------------------------------------------

fn zip_map<F: Real>(a: &[F], b: &[F], f: impl Fn(F, F) -> F) -> Vec<F> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// `C = A B`, `A: [m,k]`, `B: [k,n]`. i-k-j loop order so the inner loop
/// streams contiguous rows of `B` and `C`.
pub(crate) fn matmul_nn<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `C = A B^T`, `A: [m,k]`, `B: [n,k]` -> `C: [m,n]` (rows of both are contiguous).
pub(crate) fn matmul_nt<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = F::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            c.push(s);
        }
    }
    c
}

/// `C = A^T B`, `A: [m,k]`, `B: [m,n]` -> `C: [k,n]`.
pub(crate) fn matmul_tn<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn transpose<F: Real>(x: &[F], m: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
    out
}

fn gelu_value<F: Real>(x: F) -> F {
    let half = F::of(0.5);
    let inner = F::of(SQRT_2_OVER_PI) * (x + F::of(GELU_CUBIC) * x * x * x);
    half * x * (F::one() + inner.tanh())
}

fn gelu_derivative<F: Real>(x: F) -> F {
    let half = F::of(0.5);
    let c = F::of(SQRT_2_OVER_PI);
    let a = F::of(GELU_CUBIC);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = F::one() - t * t;
    let du = c * (F::one() + F::of(3.0) * a * x * x);
    half * (F::one() + t) + half * x * sech2 * du
}

fn layer_norm_forward<F: Real>(x: &Tensor<F>, gamma: &Tensor<F>, beta: &Tensor<F>, eps: f64) -> Tensor<F> {
    let (rows, d) = x.last_axis_view();
    let inv_d = F::of(1.0 / d as f64);
    let epsf = F::of(eps);
    let mut out = Vec::with_capacity(x.len());
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mut mean = F::zero();
        for &v in row {
            mean += v;
        }
        mean = mean * inv_d;
        let mut var = F::zero();
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var = var * inv_d;
        let inv_sigma = F::one() / (var + epsf).sqrt();
        for (j, &v) in row.iter().enumerate() {
            out.push((v - mean) * inv_sigma * gamma.data()[j] + beta.data()[j]);
        }
    }
    Tensor {
        shape: x.shape().to_vec(),
        data: out,
    }
}

fn layer_norm_backward<F: Real>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    g: &Tensor<F>,
    eps: f64,
    want_dx: bool,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let (rows, d) = x.last_axis_view();
    let inv_d = F::of(1.0 / d as f64);
    let epsf = F::of(eps);
    let mut dx = if want_dx { vec![F::zero(); x.len()] } else { Vec::new() };
    let mut dgamma = vec![F::zero(); d];
    let mut dbeta = vec![F::zero(); d];
    let mut xhat = vec![F::zero(); d];
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let grow = &g.data()[r * d..(r + 1) * d];
        let mut mean = F::zero();
        for &v in row {
            mean += v;
        }
        mean = mean * inv_d;
        let mut var = F::zero();
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var = var * inv_d;
        let inv_sigma = F::one() / (var + epsf).sqrt();
        for j in 0..d {
            xhat[j] = (row[j] - mean) * inv_sigma;
            dgamma[j] += grow[j] * xhat[j];
            dbeta[j] += grow[j];
        }
        if want_dx {
            // h = dL/dxhat; dx = (h - mean(h) - xhat * mean(h .* xhat)) / sigma
            let mut h_mean = F::zero();
            let mut hx_mean = F::zero();
            for j in 0..d {
                let h = grow[j] * gamma.data()[j];
                h_mean += h;
                hx_mean += h * xhat[j];
            }
            h_mean = h_mean * inv_d;
            hx_mean = hx_mean * inv_d;
            for j in 0..d {
                let h = grow[j] * gamma.data()[j];
                dx[r * d + j] = (h - h_mean - xhat[j] * hx_mean) * inv_sigma;
            }
        }
    }
    (dx, dgamma, dbeta)
}

fn softmax_forward<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let (rows, d) = x.last_axis_view();
    let mut out = Vec::with_capacity(x.len());
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mx = row.iter().fold(row[0], |a, &b| a.max(b));
        let mut sum = F::zero();
        let base = out.len();
        for &v in row {
            let e = (v - mx).exp();
            out.push(e);
            sum += e;
        }
        let inv = F::one() / sum;
        for v in &mut out[base..] {
            *v = *v * inv;
        }
    }
    Tensor {
        shape: x.shape().to_vec(),
        data: out,
    }
}
