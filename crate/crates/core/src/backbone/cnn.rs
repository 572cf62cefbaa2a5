use crate::autodiff::Var;
use crate::error::{Error, Result};

/// One conv3×3 → ReLU → 2×2 average-pool stage.
#[derive(Clone, Copy, Debug)]
pub struct ConvBlock<'t> {
    /// `[c_out, c_in, 3, 3]`
    pub kernels: Var<'t>,
    /// `[c_out]`
    pub bias: Var<'t>,
}

#[derive(Clone, Copy, Debug)]
pub struct CnnOutput<'t> {
    /// Globally pooled feature vector `[C]`.
    pub features: Var<'t>,
    /// Last feature map `[C, h, w]`, consumed by the segmentation head.
    pub spatial: Var<'t>,
}

pub fn cnn_forward<'t>(x: Var<'t>, blocks: &[ConvBlock<'t>]) -> Result<CnnOutput<'t>> {
    if blocks.is_empty() {
        return Err(Error::dim("convolutional branch needs at least one block"));
    }
    if x.shape().len() != 3 {
        return Err(Error::dim(format!("expected [C,H,W] input, got {:?}", x.shape())));
    }
    let mut h = x;
    for block in blocks {
        let pad = block.kernels.shape().get(2).map_or(0, |k| k / 2);
        h = h.conv2d(block.kernels, 1, pad)?.broadcast_add(block.bias, 0)?.relu()?.avg_pool2()?;
    }
    Ok(CnnOutput { features: h.gap()?, spatial: h })
}
