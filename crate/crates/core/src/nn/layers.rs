//! Layer helpers composed from tape operations.

use std::sync::Arc;

use super::{BatchStats, CsrMatrix, Mode, Tape, Tensor2, Var};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::rng::RngStream;

/// Glorot/Xavier uniform initialization.
pub fn glorot_uniform(rng: &mut RngStream, fan_in: usize, fan_out: usize) -> Tensor2 {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor2::from_fn(fan_in, fan_out, |_, _| rng.uniform_range(-a, a))
}

/// `x W + b`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_row(y, b),
        None => Ok(y),
    }
}

/// Graph convolution `A_norm x W`; activation is left to the caller.
pub fn gcn_layer(tape: &mut Tape, x: Var, norm_adj: &Arc<CsrMatrix>, w: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.spmm(norm_adj.clone(), xw)
}

/// Attention neighborhood structure: the graph plus a self-loop on every node.
pub fn attention_support(g: &SparseGraph) -> Arc<CsrMatrix> {
    Arc::new(g.with_self_loops().to_csr())
}

/// Per-head parameters of a graph attention layer.
#[derive(Debug, Clone, Copy)]
pub struct GatHead {
    /// `d_in x d_head` projection.
    pub weight: Var,
    /// `d_head x 1` attention vector applied to the receiving node.
    pub att_src: Var,
    /// `d_head x 1` attention vector applied to the neighbor.
    pub att_dst: Var,
}

/// Multi-head graph attention; head outputs are concatenated column-wise.
/// `support` must contain a self-loop for every node (see
/// [`attention_support`]).
pub fn gat_layer(
    tape: &mut Tape,
    x: Var,
    support: &Arc<CsrMatrix>,
    heads: &[GatHead],
    slope: f64,
) -> Result<Var> {
    if heads.is_empty() {
        return Err(Error::Parameter("graph attention needs at least one head".into()));
    }
    let mut outs = Vec::with_capacity(heads.len());
    for head in heads {
        let h = tape.matmul(x, head.weight)?;
        let src = tape.matmul(h, head.att_src)?;
        let dst = tape.matmul(h, head.att_dst)?;
        outs.push(tape.edge_attention(src, dst, h, support.clone(), slope)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat_cols(&outs)
    }
}

/// Running estimates used by batch normalization in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormStats {
    pub fn new(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            var: vec![1.0; width],
        }
    }

    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

/// Batch normalization; in train mode the running stats are updated with
/// `momentum`.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    stats: &mut BatchNormStats,
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<Var> {
    let (y, batch) = tape.batch_norm(x, gamma, beta, &stats.mean, &stats.var, mode, eps)?;
    if let Some(batch) = batch {
        stats.update(&batch, momentum);
    }
    Ok(y)
}

/// Inverted dropout: in train mode each entry is zeroed with probability
/// `p` and survivors are scaled by `1 / (1 - p)`. Eval mode is the identity.
pub fn dropout(tape: &mut Tape, x: Var, p: f64, rng: &mut RngStream, mode: Mode) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Parameter(format!("dropout probability {p} outside [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x);
    }
    let (rows, cols) = tape.value(x).shape();
    let keep = 1.0 / (1.0 - p);
    let mask = Tensor2::from_fn(rows, cols, |_, _| if rng.uniform() < p { 0.0 } else { keep });
    tape.mul_const(x, mask)
}
