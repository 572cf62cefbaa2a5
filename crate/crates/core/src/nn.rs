//! Small layer helpers shared by the model components.

use crate::autodiff::Var;
use crate::error::{Error, Result};

/// Pointwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Identity => Ok(x),
        }
    }
}

/// `x · W (+ b)` for a vector `x` of length `n` and `W` of shape `[n×m]`.
pub fn linear<'t>(x: Var<'t>, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
    let shape = x.shape();
    if shape.len() != 1 {
        return Err(Error::dim(format!("linear expects a vector, got {shape:?}")));
    }
    let out = x.reshape([1, shape[0]])?.matmul(weight)?;
    let m = out.shape()[1];
    let out = out.reshape([m])?;
    match bias {
        Some(b) => out.add(b),
        None => Ok(out),
    }
}
