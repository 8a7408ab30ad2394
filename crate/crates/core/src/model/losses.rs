use super::config::ReconMode;
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::nn::{Tape, Tensor2};

const PROB_CLAMP: f64 = 1e-12;

/// `sigmoid(z z^T)`, refused above `dense_budget` nodes.
pub fn decode(z: &Tensor2, dense_budget: usize) -> Result<Tensor2> {
    let n = z.rows();
    if n > dense_budget {
        return Err(Error::Size(format!(
            "dense decoder over {n} nodes exceeds the budget of {dense_budget}"
        )));
    }
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let zt = tape.constant(z.transpose());
    let logits = tape.matmul(zv, zt)?;
    let probs = tape.sigmoid(logits)?;
    Ok(tape.value(probs).clone())
}

/// Reconstruction loss of decoded probabilities `pred` (`n x n`) against
/// the 0/1 adjacency whose positive entries are the edges of `target`.
/// Pass the target with self-loops to match the decoder target `A + I`.
///
/// BCE mode averages `pos_weight * t * -ln p + (1 - t) * -ln(1 - p)` over
/// all entries and scales by `n^2 / (2 (n^2 - nnz))`, with
/// `pos_weight = (n^2 - nnz) / nnz`. Probabilities are clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn loss_reconstruction(pred: &Tensor2, target: &SparseGraph, mode: ReconMode) -> Result<f64> {
    let n = target.n();
    if pred.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "prediction is {:?} for a {n}-node target",
            pred.shape()
        )));
    }
    let nnz = target.nnz() as f64;
    if nnz == 0.0 {
        return Err(Error::Degenerate("reconstruction target has no edges".into()));
    }
    let n2 = (n * n) as f64;
    let (pos_weight, norm) = match mode {
        ReconMode::Bce => {
            if nnz >= n2 {
                return Err(Error::Degenerate("reconstruction target is fully connected".into()));
            }
            ((n2 - nnz) / nnz, n2 / (2.0 * (n2 - nnz)))
        }
        ReconMode::Mse => (1.0, 1.0),
    };
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let t = if target.has_edge(i, j) { 1.0 } else { 0.0 };
            let p = pred.get(i, j);
            total += match mode {
                ReconMode::Bce => {
                    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                    -(pos_weight * t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                }
                ReconMode::Mse => (p - t) * (p - t),
            };
        }
    }
    Ok(norm * total / n2)
}

/// `(1/n) * sum_i -1/2 * sum_d (1 + logvar - mu^2 - exp(logvar))`.
pub fn loss_kl(mu: &Tensor2, logvar: &Tensor2) -> Result<f64> {
    let mut tape = Tape::new();
    let (m, l) = (tape.constant(mu.clone()), tape.constant(logvar.clone()));
    let kl = tape.kl_normal(m, l)?;
    Ok(tape.value(kl).item())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversarialRole {
    Discriminator,
    Generator,
}

/// Adversarial BCE on discriminator logits. The discriminator role scores
/// `mean BCE(real -> 1) + mean BCE(fake -> 0)`; the generator role scores
/// `mean BCE(fake -> 1)` and ignores `real`.
pub fn loss_adversarial(real: &[f64], fake: &[f64], role: AdversarialRole) -> f64 {
    fn softplus(x: f64) -> f64 {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
    fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
        let n = v.len();
        if n == 0 {
            0.0
        } else {
            v.sum::<f64>() / n as f64
        }
    }
    match role {
        AdversarialRole::Discriminator => {
            mean(real.iter().map(|&x| softplus(-x))) + mean(fake.iter().map(|&x| softplus(x)))
        }
        AdversarialRole::Generator => mean(fake.iter().map(|&x| softplus(-x))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_zero_is_half() {
        let p = decode(&Tensor2::zeros(3, 2), 100).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn decode_orthogonal_rows() {
        let z = Tensor2::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = decode(&z, 100).unwrap();
        assert_eq!(p.get(0, 1), 0.5);
        assert!((p.get(0, 0) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn decode_budget() {
        assert!(matches!(decode(&Tensor2::zeros(5, 2), 4), Err(Error::Size(_))));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(loss_kl(&Tensor2::zeros(3, 2), &Tensor2::zeros(3, 2)).unwrap(), 0.0);
        let v = loss_kl(&Tensor2::scalar(1.0), &Tensor2::scalar(0.0)).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn adversarial_examples() {
        let d = loss_adversarial(&[0.0; 4], &[0.0; 4], AdversarialRole::Discriminator);
        assert!((d - 2.0 * 2f64.ln()).abs() < 1e-12);
        let d = loss_adversarial(&[60.0], &[-60.0], AdversarialRole::Discriminator);
        assert!(d < 1e-20);
        let sweep: Vec<f64> = (-5..=5)
            .map(|x| loss_adversarial(&[], &[x as f64], AdversarialRole::Generator))
            .collect();
        assert!(sweep.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn reconstruction_balanced_half_is_ln2() {
        // 2 nodes, 2 of 4 entries positive: pos_weight = 1, norm = 1.
        let g = SparseGraph::from_rows(vec![vec![(0, 1.0)], vec![(1, 1.0)]]).unwrap();
        let v = loss_reconstruction(&Tensor2::full(2, 2, 0.5), &g, ReconMode::Bce).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn reconstruction_perfect_prediction_is_near_zero() {
        let g = SparseGraph::from_rows(vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![]]).unwrap();
        let pred = Tensor2::from_fn(3, 3, |i, j| if i == j && i < 2 { 1.0 } else { 0.0 });
        assert!(loss_reconstruction(&pred, &g, ReconMode::Bce).unwrap() < 1e-10);
        assert_eq!(loss_reconstruction(&pred, &g, ReconMode::Mse).unwrap(), 0.0);
    }

    #[test]
    fn reconstruction_needs_edges() {
        let g = SparseGraph::from_rows(vec![vec![], vec![]]).unwrap();
        let err = loss_reconstruction(&Tensor2::full(2, 2, 0.5), &g, ReconMode::Bce).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }
}
