//! Central finite-difference verification of tape gradients.
//!
//! The numeric side only evaluates the forward function; it never touches
//! the backward rules it is checking.

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Per input: `max_i |analytic_i - numeric_i| / max(max_i |numeric_i|, floor)`.
    pub rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Evaluates the scalar `f` at `inputs` and compares its tape gradient with
/// central differences of step `h`. All inputs are treated as trainable.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let mut numeric = vec![0.0; inputs[i].len()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let x0 = inputs[i].data()[e];
            probe[i].data_mut()[e] = x0 + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[e] = x0 - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[e] = x0;
            *slot = (up - down) / (2.0 * h);
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        let err = analytic.data().iter().zip(&numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        rel_errors.push(err / scale);
    }
    Ok(GradCheck { rel_errors })
}
