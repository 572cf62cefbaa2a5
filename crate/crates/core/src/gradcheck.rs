//! Central finite-difference gradient checking.
//!
//! The checker only ever runs forward passes of the function under test;
//! numeric derivatives are formed in `f64` from those outputs and compared
//! against the tape's backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Outcome of a gradient check, one relative error per input.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub relative_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().cloned().fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error() <= tolerance
    }
}

/// Compares analytic gradients of `f` at `inputs` with central differences
/// of step `eps`.
///
/// The output of `f` may have any shape; it is contracted against a fixed
/// random projection (seeded by `seed`) so every output element contributes.
/// The relative error for an input is `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
pub fn check_gradients<F>(inputs: &[Tensor], eps: f64, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection = Tensor::uniform(out.shape(), -1.0, 1.0, &mut rng);
    let weights = tape.constant(projection.clone());
    let loss = out.mul(weights)?.sum()?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> =
        vars.iter().map(|v| v.grad().unwrap_or_else(|| Tensor::from_parts(v.shape(), vec![0.0; v.value().numel()]))).collect();

    let evaluate = |values: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let out = out.value();
        Ok(out.data().iter().zip(projection.data()).map(|(&o, &w)| o * w).sum())
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut relative_errors = Vec::with_capacity(inputs.len());
    for (i, grad) in analytic.iter().enumerate() {
        let mut diff2 = 0.0f64;
        let mut a2 = 0.0f64;
        let mut n2 = 0.0f64;
        for j in 0..inputs[i].numel() {
            let x = inputs[i].data()[j];
            let (hi, lo) = (x + eps, x - eps);
            work[i].data_mut()[j] = hi;
            let f_hi = evaluate(&work)?;
            work[i].data_mut()[j] = lo;
            let f_lo = evaluate(&work)?;
            work[i].data_mut()[j] = x;
            let numeric = (f_hi - f_lo) / (hi - lo);
            let a = grad.data()[j];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let scale = a2.sqrt().max(n2.sqrt());
        relative_errors.push(if scale < 1e-12 { 0.0 } else { diff2.sqrt() / scale });
    }
    Ok(GradCheckReport { relative_errors })
}
