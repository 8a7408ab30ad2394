use super::{ParamStore, Tensor2};
use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update of every parameter in `params`; `grads` must follow the
    /// same order and shapes.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor2]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Dimension(format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    tensor: name.to_string(),
                    expected: p.shape(),
                    found: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(Error::Gradient(name.to_string()));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| Tensor2::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (e, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[e] = self.beta1 * m[e] + (1.0 - self.beta1) * gi;
                v[e] = self.beta2 * v[e] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[e] / bc1;
                let v_hat = v[e] / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
