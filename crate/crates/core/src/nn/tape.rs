//! Reverse-mode automatic differentiation over [`Tensor2`] values.
//!
//! A [`Tape`] records every operation as it is evaluated. Leaves are either
//! parameters (gradients wanted) or constants. [`Tape::backward`] walks the
//! record in reverse from a scalar root and returns the gradient of every
//! node that depends on a parameter. The tape is not consumed, so several
//! roots recorded on one tape can be differentiated independently.
//!
//! Besides the usual elementwise and matrix primitives, a few composite
//! operations (batch normalization, graph attention aggregation, the loss
//! functions) are recorded as single nodes with hand-derived backward rules;
//! this keeps the tape short and avoids materializing large intermediates
//! such as the dense `n x n` logits of the inner-product decoder.

use std::sync::Arc;

use super::tensor::{dot, CsrMatrix, Tensor2};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Positive-entry structure of a reconstruction target (row-sorted).
pub type TargetPattern = CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReconLoss {
    /// Positive-weighted binary cross-entropy on adjacency entries.
    Bce { pos_weight: f64, norm: f64 },
    /// Mean squared error between probabilities and the 0/1 target.
    Mse,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor2),
    Scale(Var, f64),
    Exp(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    Spmm(Arc<CsrMatrix>, Var),
    Sum(Var),
    RowSoftmaxMasked {
        x: Var,
        mask: Arc<Vec<bool>>,
    },
    EdgeAttention {
        src: Var,
        dst: Var,
        h: Var,
        adj: Arc<CsrMatrix>,
        slope: f64,
        pre: Vec<f64>,
        alpha: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor2,
        inv_std: Vec<f64>,
        train: bool,
    },
    Kl {
        mu: Var,
        logvar: Var,
    },
    BceLogits {
        logits: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
    InnerProductRecon {
        z: Var,
        target: Arc<TargetPattern>,
        loss: ReconLoss,
    },
    PairRecon {
        z: Var,
        pairs: Arc<Vec<(usize, usize, f64)>>,
        loss: ReconLoss,
    },
}

struct Node {
    value: Tensor2,
    requires_grad: bool,
    op: Op,
}

/// Batch statistics computed by a train-mode batch normalization, so the
/// caller can fold them into running estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance (biased when there is a single row).
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when `v` does not influence the root.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor2 {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor2::zeros(shape.0, shape.1))
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor2) -> Var {
        self.push_unchecked(value, true, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push_unchecked(value, false, Op::Leaf)
    }

    fn push_unchecked(&mut self, value: Tensor2, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &str, value: Tensor2, inputs: &[Var], op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, requires_grad, op))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, &[a, b], Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push("add", out, &[a, b], Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push("sub", out, &[a, b], Op::Sub(a, b))
    }

    /// Adds a `1 x c` row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::Dimension(format!(
                "add_row: bias {:?} for input {:?}",
                rv.shape(),
                xv.shape()
            )));
        }
        let out = Tensor2::from_fn(xv.rows(), xv.cols(), |r, c| xv.get(r, c) + rv.get(0, c));
        self.push("add_row", out, &[x, row], Op::AddRow(x, row))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", out, &[a, b], Op::Mul(a, b))
    }

    /// Elementwise product with a constant tensor (masks, noise).
    pub fn mul_const(&mut self, x: Var, c: Tensor2) -> Result<Var> {
        let out = self.value(x).zip_map(&c, |a, b| a * b)?;
        self.push("mul_const", out, &[x], Op::MulConst(x, c))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        self.push("scale", out, &[x], Op::Scale(x, s))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::exp);
        self.push("exp", out, &[x], Op::Exp(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push("leaky_relu", out, &[x], Op::LeakyRelu(x, slope))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push("sigmoid", out, &[x], Op::Sigmoid(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor2::concat_cols(&vals)?;
        self.push("concat_cols", out, parts, Op::ConcatCols(parts.to_vec()))
    }

    /// Sparse constant times dense variable.
    pub fn spmm(&mut self, a: Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let out = a.spmm(self.value(x))?;
        self.push("spmm", out, &[x], Op::Spmm(a, x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor2::scalar(self.value(x).sum());
        self.push("sum", out, &[x], Op::Sum(x))
    }

    /// Row-wise softmax restricted to entries where `mask` is true; masked
    /// entries are 0. Every row needs at least one allowed entry.
    pub fn row_softmax_masked(&mut self, x: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        if mask.len() != rows * cols {
            return Err(Error::Dimension("softmax mask shape differs from logits".into()));
        }
        let mut out = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            let allowed = &mask[r * cols..(r + 1) * cols];
            let max = xv
                .row(r)
                .iter()
                .zip(allowed)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Degenerate(format!("softmax row {r} is fully masked")));
            }
            let mut total = 0.0;
            for c in 0..cols {
                if allowed[c] {
                    let e = (xv.get(r, c) - max).exp();
                    out.set(r, c, e);
                    total += e;
                }
            }
            for v in out.row_mut(r) {
                *v /= total;
            }
        }
        self.push("row_softmax_masked", out, &[x], Op::RowSoftmaxMasked { x, mask })
    }

    /// Neighborhood attention aggregation. For every stored entry `(i, j)`
    /// of `adj`, the score is `leaky_relu(src_i + dst_j)`; scores are
    /// softmax-normalized over row `i` and output row `i` is
    /// `sum_j alpha_ij * h_j`.
    pub fn edge_attention(
        &mut self,
        src: Var,
        dst: Var,
        h: Var,
        adj: Arc<CsrMatrix>,
        slope: f64,
    ) -> Result<Var> {
        let (sv, tv, hv) = (self.value(src), self.value(dst), self.value(h));
        let n = hv.rows();
        if sv.shape() != (n, 1) || tv.shape() != (n, 1) || adj.n_rows() != n || adj.n_cols() != n
        {
            return Err(Error::Dimension(format!(
                "edge_attention: scores {:?}/{:?}, features {:?}, adjacency {}x{}",
                sv.shape(),
                tv.shape(),
                hv.shape(),
                adj.n_rows(),
                adj.n_cols()
            )));
        }
        let mut pre = vec![0.0; adj.nnz()];
        let mut alpha = vec![0.0; adj.nnz()];
        let mut out = Tensor2::zeros(n, hv.cols());
        for i in 0..n {
            let (s, e) = (adj.row_offsets[i], adj.row_offsets[i + 1]);
            if s == e {
                return Err(Error::Degenerate(format!(
                    "node {i} has an empty attention neighborhood"
                )));
            }
            let mut max = f64::NEG_INFINITY;
            for p in s..e {
                let x = sv.get(i, 0) + tv.get(adj.col_indices[p], 0);
                pre[p] = x;
                let score = if x > 0.0 { x } else { slope * x };
                alpha[p] = score;
                max = max.max(score);
            }
            let mut total = 0.0;
            for a in &mut alpha[s..e] {
                *a = (*a - max).exp();
                total += *a;
            }
            let out_row = out.row_mut(i);
            for p in s..e {
                alpha[p] /= total;
                for (o, &hj) in out_row.iter_mut().zip(hv.row(adj.col_indices[p])) {
                    *o += alpha[p] * hj;
                }
            }
        }
        self.push(
            "edge_attention",
            out,
            &[src, dst, h],
            Op::EdgeAttention {
                src,
                dst,
                h,
                adj,
                slope,
                pre,
                alpha,
            },
        )
    }

    /// Per-column normalization. Train mode uses batch statistics (returned
    /// so the caller can update running estimates); eval mode uses the given
    /// running mean and variance.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        mode: Mode,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.shape() != (1, cols) || bv.shape() != (1, cols) {
            return Err(Error::Dimension(format!(
                "batch_norm: gamma {:?} beta {:?} for input {:?}",
                gv.shape(),
                bv.shape(),
                xv.shape()
            )));
        }
        if running_mean.len() != cols || running_var.len() != cols {
            return Err(Error::Dimension("batch_norm: running stats width".into()));
        }
        if rows == 0 {
            return Err(Error::Degenerate("batch_norm over zero rows".into()));
        }
        let (mean, var_biased, stats) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; cols];
                for r in 0..rows {
                    for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut ss = vec![0.0; cols];
                for r in 0..rows {
                    for ((s, v), m) in ss.iter_mut().zip(xv.row(r)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                let biased: Vec<f64> = ss.iter().map(|s| s / rows as f64).collect();
                let unbiased = if rows > 1 {
                    ss.iter().map(|s| s / (rows - 1) as f64).collect()
                } else {
                    biased.clone()
                };
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, biased, Some(stats))
            }
            Mode::Eval => (running_mean.to_vec(), running_var.to_vec(), None),
        };
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xhat = Tensor2::from_fn(rows, cols, |r, c| (xv.get(r, c) - mean[c]) * inv_std[c]);
        let out = Tensor2::from_fn(rows, cols, |r, c| gv.get(0, c) * xhat.get(r, c) + bv.get(0, c));
        let var = self.push(
            "batch_norm",
            out,
            &[x, gamma, beta],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
        )?;
        Ok((var, stats))
    }

    /// `(1/n) * sum_i -1/2 * sum_d (1 + logvar - mu^2 - exp(logvar))`.
    pub fn kl_normal(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        let (m, l) = (self.value(mu), self.value(logvar));
        m.check_same_shape(l, "kl")?;
        let n = m.rows().max(1) as f64;
        let total: f64 = m
            .data()
            .iter()
            .zip(l.data())
            .map(|(&m, &l)| -0.5 * (1.0 + l - m * m - l.exp()))
            .sum();
        self.push("kl", Tensor2::scalar(total / n), &[mu, logvar], Op::Kl { mu, logvar })
    }

    /// `sum_r weights_r * BCE(sigmoid(logits_r), targets_r)` over an `n x 1`
    /// logit column.
    pub fn bce_logits(&mut self, logits: Var, targets: Vec<f64>, weights: Vec<f64>) -> Result<Var> {
        let lv = self.value(logits);
        if lv.cols() != 1 || lv.rows() != targets.len() || targets.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "bce_logits: logits {:?}, {} targets, {} weights",
                lv.shape(),
                targets.len(),
                weights.len()
            )));
        }
        let total: f64 = lv
            .data()
            .iter()
            .zip(&targets)
            .zip(&weights)
            .map(|((&x, &t), &w)| w * (t * softplus(-x) + (1.0 - t) * softplus(x)))
            .sum();
        self.push(
            "bce_logits",
            Tensor2::scalar(total),
            &[logits],
            Op::BceLogits {
                logits,
                targets,
                weights,
            },
        )
    }

    /// Reconstruction loss of the inner-product decoder `sigmoid(z z^T)`
    /// against a 0/1 target whose positive entries are the stored entries of
    /// `target`. The loss is averaged over all `n^2` entries.
    pub fn inner_product_recon(
        &mut self,
        z: Var,
        target: Arc<TargetPattern>,
        loss: ReconLoss,
    ) -> Result<Var> {
        let zv = self.value(z);
        let n = zv.rows();
        if target.n_rows() != n || target.n_cols() != n {
            return Err(Error::Dimension(format!(
                "reconstruction target is {}x{} for {n} latent rows",
                target.n_rows(),
                target.n_cols()
            )));
        }
        let mut total = 0.0;
        for_each_entry(zv, &target, |_, _, x, t| {
            total += recon_entry(x, t, loss).0;
        });
        let scale = match loss {
            ReconLoss::Bce { norm, .. } => norm,
            ReconLoss::Mse => 1.0,
        };
        let value = scale * total / (n * n) as f64;
        self.push(
            "inner_product_recon",
            Tensor2::scalar(value),
            &[z],
            Op::InnerProductRecon { z, target, loss },
        )
    }

    /// Reconstruction loss restricted to sampled `(i, j, target)` pairs,
    /// averaged over the pairs. Used when the dense decoder is too large.
    pub fn inner_product_pairs(
        &mut self,
        z: Var,
        pairs: Arc<Vec<(usize, usize, f64)>>,
        loss: ReconLoss,
    ) -> Result<Var> {
        let zv = self.value(z);
        if pairs.is_empty() {
            return Err(Error::Degenerate("no sampled pairs".into()));
        }
        if let Some(&(i, j, _)) = pairs.iter().find(|&&(i, j, _)| i >= zv.rows() || j >= zv.rows()) {
            return Err(Error::Dimension(format!(
                "pair ({i}, {j}) out of range for {} latent rows",
                zv.rows()
            )));
        }
        let total: f64 = pairs
            .iter()
            .map(|&(i, j, t)| recon_entry(dot(zv.row(i), zv.row(j)), t, loss).0)
            .sum();
        let value = recon_scale(loss) * total / pairs.len() as f64;
        self.push(
            "inner_product_pairs",
            Tensor2::scalar(value),
            &[z],
            Op::PairRecon { z, pairs, loss },
        )
    }

    /// Gradients of the scalar `root` with respect to every node that
    /// depends on a parameter.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::Dimension("backward root must be a 1x1 tensor".into()));
        }
        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor2::scalar(1.0));
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node, g: &Tensor2, grads: &mut [Option<Tensor2>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.matmul_t(bv)?);
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, av.t_matmul(g)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*row) {
                    let mut col_sums = Tensor2::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (s, v) in col_sums.row_mut(0).iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                    self.accumulate(grads, *row, col_sums);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.zip_map(bv, |x, y| x * y)?);
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.zip_map(av, |x, y| x * y)?);
                }
            }
            Op::MulConst(x, c) => self.accumulate(grads, *x, g.zip_map(c, |a, b| a * b)?),
            Op::Scale(x, s) => self.accumulate(grads, *x, g.map(|v| v * s)),
            Op::Exp(x) => self.accumulate(grads, *x, g.zip_map(&node.value, |a, b| a * b)?),
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                let gx = g.zip_map(xv, |gi, xi| if xi > 0.0 { gi } else { slope * gi })?;
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = g.zip_map(&node.value, |gi, s| gi * s * (1.0 - s))?;
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        let part = Tensor2::from_fn(g.rows(), w, |r, c| g.get(r, offset + c));
                        self.accumulate(grads, p, part);
                    }
                    offset += w;
                }
            }
            Op::Spmm(a, x) => self.accumulate(grads, *x, a.spmm_t(g)?),
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                self.accumulate(grads, *x, Tensor2::full(r, c, g.item()));
            }
            Op::RowSoftmaxMasked { x, mask } => {
                let y = &node.value;
                let (rows, cols) = y.shape();
                let mut gx = Tensor2::zeros(rows, cols);
                for r in 0..rows {
                    let inner = dot(y.row(r), g.row(r));
                    for c in 0..cols {
                        if mask[r * cols + c] {
                            gx.set(r, c, y.get(r, c) * (g.get(r, c) - inner));
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::EdgeAttention {
                src,
                dst,
                h,
                adj,
                slope,
                pre,
                alpha,
            } => {
                let hv = self.value(*h);
                let n = hv.rows();
                let mut g_src = Tensor2::zeros(n, 1);
                let mut g_dst = Tensor2::zeros(n, 1);
                let mut g_h = Tensor2::zeros(n, hv.cols());
                let mut d_alpha = Vec::new();
                for i in 0..n {
                    let (s, e) = (adj.row_offsets[i], adj.row_offsets[i + 1]);
                    let gi = g.row(i);
                    d_alpha.clear();
                    let mut weighted = 0.0;
                    for p in s..e {
                        let j = adj.col_indices[p];
                        let da = dot(gi, hv.row(j));
                        weighted += alpha[p] * da;
                        d_alpha.push(da);
                        for (o, &gv) in g_h.row_mut(j).iter_mut().zip(gi) {
                            *o += alpha[p] * gv;
                        }
                    }
                    for (q, p) in (s..e).enumerate() {
                        let de = alpha[p] * (d_alpha[q] - weighted);
                        let dpre = if pre[p] > 0.0 { de } else { slope * de };
                        g_src.data_mut()[i] += dpre;
                        g_dst.data_mut()[adj.col_indices[p]] += dpre;
                    }
                }
                self.accumulate(grads, *src, g_src);
                self.accumulate(grads, *dst, g_dst);
                self.accumulate(grads, *h, g_h);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (rows, cols) = xhat.shape();
                let gv = self.value(*gamma);
                let mut g_gamma = Tensor2::zeros(1, cols);
                let mut g_beta = Tensor2::zeros(1, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        g_gamma.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                        g_beta.data_mut()[c] += g.get(r, c);
                    }
                }
                if self.requires_grad(*x) {
                    let gx = if *train {
                        let m = rows as f64;
                        Tensor2::from_fn(rows, cols, |r, c| {
                            let dxhat = g.get(r, c) * gv.get(0, c);
                            let sum_dxhat = g_beta.get(0, c) * gv.get(0, c);
                            let sum_dxhat_xhat = g_gamma.get(0, c) * gv.get(0, c);
                            inv_std[c] / m
                                * (m * dxhat - sum_dxhat - xhat.get(r, c) * sum_dxhat_xhat)
                        })
                    } else {
                        Tensor2::from_fn(rows, cols, |r, c| g.get(r, c) * gv.get(0, c) * inv_std[c])
                    };
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *gamma, g_gamma);
                self.accumulate(grads, *beta, g_beta);
            }
            Op::Kl { mu, logvar } => {
                let (m, l) = (self.value(*mu), self.value(*logvar));
                let scale = g.item() / m.rows().max(1) as f64;
                self.accumulate(grads, *mu, m.map(|v| v * scale));
                self.accumulate(grads, *logvar, l.map(|v| -0.5 * (1.0 - v.exp()) * scale));
            }
            Op::BceLogits {
                logits,
                targets,
                weights,
            } => {
                let lv = self.value(*logits);
                let gs = g.item();
                let data = lv
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(weights)
                    .map(|((&x, &t), &w)| gs * w * (sigmoid(x) - t))
                    .collect();
                self.accumulate(grads, *logits, Tensor2::from_vec(lv.rows(), 1, data)?);
            }
            Op::InnerProductRecon { z, target, loss } => {
                let zv = self.value(*z);
                let n = zv.rows();
                let scale = match loss {
                    ReconLoss::Bce { norm, .. } => *norm,
                    ReconLoss::Mse => 1.0,
                } * g.item()
                    / (n * n) as f64;
                // dL/dlogits = G, logits = z z^T, so dL/dz = (G + G^T) z.
                let mut dlogits = Tensor2::zeros(n, n);
                for_each_entry(zv, target, |i, j, x, t| {
                    dlogits.set(i, j, scale * recon_entry(x, t, *loss).1);
                });
                let sym = dlogits.zip_map(&dlogits.transpose(), |a, b| a + b)?;
                self.accumulate(grads, *z, sym.matmul(zv)?);
            }
            Op::PairRecon { z, pairs, loss } => {
                let zv = self.value(*z);
                let scale = recon_scale(*loss) * g.item() / pairs.len() as f64;
                let mut gz = Tensor2::zeros(zv.rows(), zv.cols());
                for &(i, j, t) in pairs.iter() {
                    let d = scale * recon_entry(dot(zv.row(i), zv.row(j)), t, *loss).1;
                    for c in 0..zv.cols() {
                        gz.data_mut()[i * zv.cols() + c] += d * zv.get(j, c);
                        gz.data_mut()[j * zv.cols() + c] += d * zv.get(i, c);
                    }
                }
                self.accumulate(grads, *z, gz);
            }
        }
        Ok(())
    }
}

/// Visits every `(i, j)` with logit `z_i . z_j` and 0/1 target.
fn for_each_entry(z: &Tensor2, target: &TargetPattern, mut f: impl FnMut(usize, usize, f64, f64)) {
    let n = z.rows();
    for i in 0..n {
        let (cols, _) = target.row(i);
        let mut next = 0;
        let zi = z.row(i);
        for j in 0..n {
            let t = if next < cols.len() && cols[next] == j {
                next += 1;
                1.0
            } else {
                0.0
            };
            f(i, j, dot(zi, z.row(j)), t);
        }
    }
}

fn recon_scale(loss: ReconLoss) -> f64 {
    match loss {
        ReconLoss::Bce { norm, .. } => norm,
        ReconLoss::Mse => 1.0,
    }
}

/// Per-entry loss and its derivative with respect to the logit.
#[inline]
fn recon_entry(x: f64, t: f64, loss: ReconLoss) -> (f64, f64) {
    match loss {
        ReconLoss::Bce { pos_weight, .. } => {
            let value = pos_weight * t * softplus(-x) + (1.0 - t) * softplus(x);
            let s = sigmoid(x);
            let grad = pos_weight * t * (s - 1.0) + (1.0 - t) * s;
            (value, grad)
        }
        ReconLoss::Mse => {
            let s = sigmoid(x);
            ((s - t) * (s - t), 2.0 * (s - t) * s * (1.0 - s))
        }
    }
}
