//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records coarse matrix operations (products, sparse-dense
//! products, activations, normalization, loss). Each operation returns a
//! [`Var`] handle; [`Tape::backward`] consumes the tape and returns the
//! gradient of a scalar with respect to every recorded value that requires
//! one. Parameters live outside the tape and are re-registered as leaves on
//! every forward pass.
//!
//! Every operation checks that its output is finite and returns
//! [`TensorError::NonFinite`] otherwise.

pub mod adam;
pub mod gradcheck;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::Matrix;
use crate::sparse::{self, SparseMatrix};

pub use adam::AdamState;
pub use gradcheck::finite_diff_check;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{0}: non-finite value produced")]
    NonFinite(&'static str),
    #[error("loss must be averaged over a non-empty index subset")]
    EmptyIndexSubset,
    #[error("label {label} of node {node} is not below the number of classes {classes}")]
    InvalidLabel {
        node: usize,
        label: usize,
        classes: usize,
    },
    #[error("index {0} is outside the logits")]
    IndexOutOfRange(usize),
    #[error("dropout probability {0} not in [0, 1)")]
    InvalidProbability(f64),
    #[error("learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),
    #[error("backward needs a scalar, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("backward called without a forward pass on this tape")]
    NoForward,
    #[error("concatenation or max of zero inputs")]
    NoInputs,
    #[error("forward pass is not deterministic")]
    NondeterministicForward,
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// Running statistics of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(width: usize) -> Self {
        Self {
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Dropout(Var, Vec<f64>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        x_hat: Matrix,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    ConcatCols(Vec<Var>),
    MaxOf(Vec<Var>, Vec<u32>),
    SumSquares(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Matrix,
        labels: Vec<usize>,
        idx: Vec<usize>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite(op: &'static str, m: &Matrix) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(TensorError::NonFinite(op))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    fn push(&mut self, op: &'static str, value: Matrix, kind: Op, requires_grad: bool) -> Result<Var> {
        check_finite(op, &value)?;
        self.nodes.push(Node {
            value,
            op: kind,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// Records a trainable value.
    pub fn param(&mut self, value: Matrix) -> Result<Var> {
        self.push("param", value, Op::Leaf, true)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.push("constant", value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let out = va.matmul(vb);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push("matmul", out, Op::MatMul(a, b), rg)
    }

    /// `s · x` for a fixed sparse matrix.
    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if s.n_cols() != vx.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "spmm",
                left: s.shape(),
                right: vx.shape(),
            });
        }
        let out = sparse::spmm_dense(s, vx);
        let rg = self.requires_grad(x);
        self.push("spmm", out, Op::SpMM(Arc::clone(s), x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push("add", out, Op::Add(a, b), rg)
    }

    /// Adds a `1 × c` row vector to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_bias",
                left: vx.shape(),
                right: vb.shape(),
            });
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(vb.as_slice()) {
                *o += b;
            }
        }
        let rg = self.requires_grad(x) || self.requires_grad(bias);
        self.push("add_row_bias", out, Op::AddRowBias(x, bias), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).map(|v| c * v);
        let rg = self.requires_grad(x);
        self.push("scale", out, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.requires_grad(x);
        self.push("relu", out, Op::Relu(x), rg)
    }

    /// Inverted dropout with a mask drawn from `seed`. Identity when not
    /// training or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, seed: u64, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidProbability(p));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vx = self.value(x);
        let mask: Vec<f64> = (0..vx.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = vx.as_slice().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Matrix::from_vec(vx.rows(), vx.cols(), data);
        let rg = self.requires_grad(x);
        self.push("dropout", out, Op::Dropout(x, mask), rg)
    }

    /// Batch normalization over rows. Training mode normalizes with batch
    /// statistics and updates `state`; evaluation uses the running statistics.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        training: bool,
    ) -> Result<Var> {
        let vx = self.value(x);
        let (n, c) = vx.shape();
        for p in [gamma, beta] {
            if self.value(p).shape() != (1, c) {
                return Err(TensorError::ShapeMismatch {
                    op: "batchnorm",
                    left: vx.shape(),
                    right: self.value(p).shape(),
                });
            }
        }
        if state.running_mean.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm",
                left: vx.shape(),
                right: (1, state.running_mean.len()),
            });
        }
        let (mean, var) = if training {
            let mut mean = vec![0.0; c];
            for r in 0..n {
                for (m, &v) in mean.iter_mut().zip(vx.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; c];
            for r in 0..n {
                for ((s, &v), &m) in var.iter_mut().zip(vx.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            let unbiased: Vec<f64> = var
                .iter()
                .map(|s| if n > 1 { s / (n - 1) as f64 } else { 0.0 })
                .collect();
            var.iter_mut().for_each(|s| *s /= n as f64);
            let mo = state.momentum;
            for j in 0..c {
                state.running_mean[j] = (1.0 - mo) * state.running_mean[j] + mo * mean[j];
                state.running_var[j] = (1.0 - mo) * state.running_var[j] + mo * unbiased[j];
            }
            (mean, var)
        } else {
            (state.running_mean.clone(), state.running_var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let mut x_hat = vx.clone();
        for r in 0..n {
            for ((h, &m), &s) in x_hat.row_mut(r).iter_mut().zip(&mean).zip(&inv_std) {
                *h = (*h - m) * s;
            }
        }
        let (g, b) = (self.value(gamma).as_slice(), self.value(beta).as_slice());
        let mut out = x_hat.clone();
        for r in 0..n {
            for ((o, &gj), &bj) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gj + bj;
            }
        }
        let rg = self.requires_grad(x) || self.requires_grad(gamma) || self.requires_grad(beta);
        self.push(
            "batchnorm",
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                batch_stats: training,
            },
            rg,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::NoInputs)?;
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(first).shape(),
                    right: self.value(p).shape(),
                });
            }
        }
        let width: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, width);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Elementwise maximum; the first input wins ties.
    pub fn max_of(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::NoInputs)?;
        let shape = self.value(first).shape();
        for &p in parts {
            if self.value(p).shape() != shape {
                return Err(TensorError::ShapeMismatch {
                    op: "max_of",
                    left: shape,
                    right: self.value(p).shape(),
                });
            }
        }
        let mut out = self.value(first).clone();
        let mut arg = vec![0u32; out.len()];
        for (k, &p) in parts.iter().enumerate().skip(1) {
            for ((o, a), &v) in out
                .as_mut_slice()
                .iter_mut()
                .zip(arg.iter_mut())
                .zip(self.value(p).as_slice())
            {
                if v > *o {
                    *o = v;
                    *a = k as u32;
                }
            }
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        self.push("max_of", out, Op::MaxOf(parts.to_vec(), arg), rg)
    }

    /// `Σ x²` as a `1 × 1` value.
    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).as_slice().iter().map(|v| v * v).sum();
        let rg = self.requires_grad(x);
        self.push("sum_squares", Matrix::filled(1, 1, s), Op::SumSquares(x), rg)
    }

    /// Mean softmax cross-entropy over the rows listed in `idx`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], idx: &[usize]) -> Result<Var> {
        if idx.is_empty() {
            return Err(TensorError::EmptyIndexSubset);
        }
        let vl = self.value(logits);
        let (n, c) = vl.shape();
        if labels.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: vl.shape(),
                right: (labels.len(), 1),
            });
        }
        let mut probs = Matrix::zeros(idx.len(), c);
        let mut loss = 0.0;
        for (k, &i) in idx.iter().enumerate() {
            if i >= n {
                return Err(TensorError::IndexOutOfRange(i));
            }
            if labels[i] >= c {
                return Err(TensorError::InvalidLabel {
                    node: i,
                    label: labels[i],
                    classes: c,
                });
            }
            let row = vl.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &v) in probs.row_mut(k).iter_mut().zip(row) {
                *p = (v - max).exp();
                z += *p;
            }
            probs.row_mut(k).iter_mut().for_each(|p| *p /= z);
            loss += max + z.ln() - row[labels[i]];
        }
        let loss = Matrix::filled(1, 1, loss / idx.len() as f64);
        let rg = self.requires_grad(logits);
        self.push(
            "softmax_cross_entropy",
            loss,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
                idx: idx.to_vec(),
            },
            rg,
        )
    }

    /// Back-propagates from the scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.tape != self.id || loss.index >= self.nodes.len() {
            return Err(TensorError::NoForward);
        }
        let shape = self.nodes[loss.index].value.shape();
        if shape != (1, 1) {
            return Err(TensorError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(Matrix::filled(1, 1, 1.0));

        fn accumulate(grads: &mut [Option<Matrix>], nodes: &[Node], v: Var, g: Matrix) {
            if !nodes[v.index].requires_grad {
                return;
            }
            match &mut grads[v.index] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for index in (0..=loss.index).rev() {
            let Some(g) = grads[index].take() else {
                continue;
            };
            let node = &self.nodes[index];
            let nodes = &self.nodes;
            let val = |v: Var| &nodes[v.index].value;
            match &node.op {
                Op::Leaf => {
                    grads[index] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if nodes[a.index].requires_grad {
                        accumulate(&mut grads, nodes, *a, g.matmul_t(val(*b)));
                    }
                    if nodes[b.index].requires_grad {
                        accumulate(&mut grads, nodes, *b, val(*a).t_matmul(&g));
                    }
                }
                Op::SpMM(s, x) => {
                    accumulate(&mut grads, nodes, *x, sparse::spmm_transposed_dense(s, &g));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, nodes, *a, g.clone());
                    accumulate(&mut grads, nodes, *b, g);
                }
                Op::AddRowBias(x, b) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, nodes, *b, gb);
                    accumulate(&mut grads, nodes, *x, g);
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    accumulate(&mut grads, nodes, *x, g.map(|v| c * v));
                }
                Op::Relu(x) => {
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(node.value.as_slice())
                        .map(|(&gv, &out)| if out > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, nodes, *x, Matrix::from_vec(g.rows(), g.cols(), data));
                }
                Op::Dropout(x, mask) => {
                    let data = g.as_slice().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                    accumulate(&mut grads, nodes, *x, Matrix::from_vec(g.rows(), g.cols(), data));
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    x_hat,
                    inv_std,
                    batch_stats,
                } => {
                    let (n, c) = g.shape();
                    let gam = val(*gamma).as_slice();
                    let mut g_gamma = Matrix::zeros(1, c);
                    let mut g_beta = Matrix::zeros(1, c);
                    for r in 0..n {
                        for j in 0..c {
                            let gv = g.get(r, j);
                            g_gamma.as_mut_slice()[j] += gv * x_hat.get(r, j);
                            g_beta.as_mut_slice()[j] += gv;
                        }
                    }
                    if nodes[x.index].requires_grad {
                        let mut gx = Matrix::zeros(n, c);
                        if *batch_stats {
                            // dx = inv_std / n * (n dxh - Σ dxh - x_hat Σ (dxh x_hat)), dxh = g γ.
                            let nf = n as f64;
                            for j in 0..c {
                                let sum_dxh = g_beta.as_slice()[j] * gam[j];
                                let sum_dxh_xh = g_gamma.as_slice()[j] * gam[j];
                                for r in 0..n {
                                    let dxh = g.get(r, j) * gam[j];
                                    gx.set(
                                        r,
                                        j,
                                        inv_std[j] / nf
                                            * (nf * dxh - sum_dxh - x_hat.get(r, j) * sum_dxh_xh),
                                    );
                                }
                            }
                        } else {
                            for r in 0..n {
                                for j in 0..c {
                                    gx.set(r, j, g.get(r, j) * gam[j] * inv_std[j]);
                                }
                            }
                        }
                        accumulate(&mut grads, nodes, *x, gx);
                    }
                    accumulate(&mut grads, nodes, *gamma, g_gamma);
                    accumulate(&mut grads, nodes, *beta, g_beta);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        if nodes[p.index].requires_grad {
                            let mut gp = Matrix::zeros(g.rows(), w);
                            for r in 0..g.rows() {
                                gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                            }
                            accumulate(&mut grads, nodes, p, gp);
                        }
                        offset += w;
                    }
                }
                Op::MaxOf(parts, arg) => {
                    for (k, &p) in parts.iter().enumerate() {
                        if !nodes[p.index].requires_grad {
                            continue;
                        }
                        let data = g
                            .as_slice()
                            .iter()
                            .zip(arg)
                            .map(|(&gv, &a)| if a as usize == k { gv } else { 0.0 })
                            .collect();
                        accumulate(&mut grads, nodes, p, Matrix::from_vec(g.rows(), g.cols(), data));
                    }
                }
                Op::SumSquares(x) => {
                    let s = g.as_slice()[0];
                    accumulate(&mut grads, nodes, *x, val(*x).map(|v| 2.0 * v * s));
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    probs,
                    labels,
                    idx,
                } => {
                    let scale = g.as_slice()[0] / idx.len() as f64;
                    let mut gl = Matrix::zeros(val(*logits).rows(), val(*logits).cols());
                    for (k, &i) in idx.iter().enumerate() {
                        let row = gl.row_mut(i);
                        for (o, &p) in row.iter_mut().zip(probs.row(k)) {
                            *o += scale * p;
                        }
                        row[labels[i]] -= scale;
                    }
                    accumulate(&mut grads, nodes, *logits, gl);
                }
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of a leaf recorded with [`Tape::param`]; `None` when the
    /// loss does not depend on it or it does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`], with zeros of the given shape when absent.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

/// Uniform Glorot initialization: `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let limit = (6.0 / (rows + cols).max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
    Matrix::from_vec(rows, cols, data)
}
