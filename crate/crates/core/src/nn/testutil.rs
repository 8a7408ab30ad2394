//! Central finite-difference oracle for unit tests.

use super::{Tape, Tensor2, Var};
use crate::error::Result;
use crate::rng::RngStream;

pub const FD_STEP: f64 = 1e-5;

pub fn rand_tensor(rng: &mut RngStream, rows: usize, cols: usize) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| rng.uniform_range(-1.0, 1.0))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Compares tape gradients of `f` against central differences for every
/// entry of every input; panics when the worst relative error exceeds `tol`.
pub fn check_grads<F>(inputs: &[Tensor2], tol: f64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor2]| -> f64 {
        let mut t = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| t.param(v.clone())).collect();
        let out = f(&mut t, &vars).expect("forward");
        t.value(out).item()
    };

    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| t.param(v.clone())).collect();
    let root = f(&mut t, &vars).expect("forward");
    let grads = t.backward(root).expect("backward");

    let mut worst: f64 = 0.0;
    let mut vals = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, inputs[k].shape());
        for e in 0..inputs[k].len() {
            let orig = vals[k].data()[e];
            vals[k].data_mut()[e] = orig + FD_STEP;
            let plus = eval(&vals);
            vals[k].data_mut()[e] = orig - FD_STEP;
            let minus = eval(&vals);
            vals[k].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = rel_err(analytic.data()[e], numeric);
            assert!(
                err < tol,
                "input {k} entry {e}: analytic {} numeric {numeric} rel err {err}",
                analytic.data()[e]
            );
            worst = worst.max(err);
        }
    }
    worst
}
