use crate::autodiff::{concat, Var};
use crate::error::{Error, Result};
use crate::nn::linear;

#[derive(Clone, Copy, Debug)]
pub struct ChannelAttentionParams<'t> {
    /// `[C × C/r]`
    pub w1: Var<'t>,
    /// `[C/r × C]`
    pub w2: Var<'t>,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput<'t> {
    pub output: Var<'t>,
    /// Per-channel gates, each in (0, 1).
    pub gates: Var<'t>,
}

/// Squeeze-and-excite gating. A vector input is its own pooled summary;
/// a `[C,H,W]` input is average-pooled and the gates broadcast over space.
pub fn channel_attention<'t>(f: Var<'t>, params: &ChannelAttentionParams<'t>) -> Result<AttentionOutput<'t>> {
    let shape = f.shape();
    let pooled = match shape.len() {
        1 => f,
        3 => f.gap()?,
        _ => return Err(Error::dim(format!("channel attention expects [C] or [C,H,W], got {shape:?}"))),
    };
    let c = shape[0];
    if params.w1.shape().first() != Some(&c) || params.w2.shape().get(1) != Some(&c) {
        return Err(Error::dim(format!(
            "attention weights {:?}/{:?} do not match {c} channels",
            params.w1.shape(),
            params.w2.shape()
        )));
    }
    let gates = linear(linear(pooled, params.w1, None)?.relu()?, params.w2, None)?.sigmoid()?;
    let output = if shape.len() == 1 { f.mul(gates)? } else { f.broadcast_mul(gates, 0)? };
    Ok(AttentionOutput { output, gates })
}

#[derive(Clone, Copy, Debug)]
pub struct FusionParams<'t> {
    /// `[(dim F′ + dim F_GNN) × fusion_dim]`
    pub weight: Var<'t>,
    pub bias: Var<'t>,
}

/// `ReLU([F′ ‖ F_GNN] · W + b)`
pub fn fuse_final<'t>(f_prime: Var<'t>, f_gnn: Var<'t>, params: &FusionParams<'t>) -> Result<Var<'t>> {
    let joined = concat(&[f_prime, f_gnn], 0)?;
    if params.weight.shape().first() != joined.shape().first() {
        return Err(Error::dim(format!("fusion weight {:?} does not take {} inputs", params.weight.shape(), joined.shape()[0])));
    }
    linear(joined, params.weight, Some(params.bias))?.relu()
}
