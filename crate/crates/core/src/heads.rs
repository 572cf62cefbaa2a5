//! Task heads and their losses.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::linear;
use crate::tensor::Tensor;

/// Smoothing constant of the soft Dice loss.
pub const DICE_SMOOTHING: f64 = 1.0;

/// Probability floor inside the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Linear layer followed by a softmax over classes.
pub fn classify_head<'t>(features: Var<'t>, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
    linear(features, weight, Some(bias))?.softmax(0)
}

/// 1×1 convolution to class channels, per-pixel softmax, then bilinear
/// upsampling to `size`.
pub fn segment_head<'t>(spatial: Var<'t>, kernels: Var<'t>, bias: Var<'t>, size: (usize, usize)) -> Result<Var<'t>> {
    let ks = kernels.shape();
    if ks.len() != 4 || ks[2] != 1 || ks[3] != 1 {
        return Err(Error::dim(format!("segmentation kernels must be [K, C, 1, 1], got {ks:?}")));
    }
    spatial.conv2d(kernels, 1, 0)?.broadcast_add(bias, 0)?.softmax(0)?.resize_bilinear(size.0, size.1)
}

/// Linear scalar regression.
pub fn growth_head<'t>(features: Var<'t>, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
    linear(features, weight, Some(bias))?.reshape(Vec::new())
}

/// `−ln(max(p_label, 1e-12))`
pub fn cross_entropy<'t>(probs: Var<'t>, label: usize) -> Result<Var<'t>> {
    let n = probs.shape().iter().product::<usize>();
    if label >= n {
        return Err(Error::contract(format!("label {label} outside {n} classes")));
    }
    probs.pick(&[label])?.ln_floored(PROB_FLOOR)?.neg()?.reshape(Vec::new())
}

/// Soft Dice loss with smoothing 1, averaged over class channels.
pub fn dice_loss<'t>(mask: Var<'t>, truth: &Tensor) -> Result<Var<'t>> {
    dice_loss_smoothed(mask, truth, DICE_SMOOTHING)
}

/// `1 − mean_k (2·Σ p·t + s)/(Σ p + Σ t + s)` over channels `k` of `[K,H,W]`.
pub fn dice_loss_smoothed<'t>(mask: Var<'t>, truth: &Tensor, smooth: f64) -> Result<Var<'t>> {
    if mask.shape().len() != 3 {
        return Err(Error::dim(format!("mask must be [K,H,W], got {:?}", mask.shape())));
    }
    mask.soft_dice(truth, smooth)
}

/// `(ŷ − y)²`
pub fn mse_loss<'t>(prediction: Var<'t>, target: f64) -> Result<Var<'t>> {
    let diff = prediction.add_scalar(-target)?;
    diff.mul(diff)
}

/// Relative weights of the classification, segmentation and growth terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.3, gamma: 0.2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::contract(format!("loss weights must be non-negative, got {w:?}")));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::contract("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

/// Per-component losses of one sample; absent targets leave a term out.
#[derive(Clone, Copy, Debug, Default)]
pub struct TaskLosses<'t> {
    pub cls: Option<Var<'t>>,
    pub seg: Option<Var<'t>>,
    pub growth: Option<Var<'t>>,
}

/// Scalar loss values; missing components count as zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub l_cls: f64,
    pub l_seg: f64,
    pub l_growth: f64,
    pub l_total: f64,
}

impl LossReport {
    pub fn add(&mut self, other: &LossReport) {
        self.l_cls += other.l_cls;
        self.l_seg += other.l_seg;
        self.l_growth += other.l_growth;
        self.l_total += other.l_total;
    }

    pub fn scaled(&self, factor: f64) -> LossReport {
        LossReport {
            l_cls: self.l_cls * factor,
            l_seg: self.l_seg * factor,
            l_growth: self.l_growth * factor,
            l_total: self.l_total * factor,
        }
    }
}

/// `α·l_cls + β·l_seg + γ·l_growth` over the terms present.
///
/// Fails when no term is present.
pub fn total_loss<'t>(losses: &TaskLosses<'t>, weights: &LossWeights) -> Result<(Var<'t>, LossReport)> {
    weights.validate()?;
    let mut total: Option<Var<'t>> = None;
    let mut values = [0.0f64; 3];
    let terms = [(losses.cls, weights.alpha), (losses.seg, weights.beta), (losses.growth, weights.gamma)];
    for (i, (term, w)) in terms.into_iter().enumerate() {
        let Some(term) = term else { continue };
        values[i] = term.item()?;
        let weighted = term.scale(w)?;
        total = Some(match total {
            Some(acc) => acc.add(weighted)?,
            None => weighted,
        });
    }
    let total = total.ok_or_else(|| Error::contract("no loss component present"))?;
    let report = LossReport { l_cls: values[0], l_seg: values[1], l_growth: values[2], l_total: total.item()? };
    Ok((total, report))
}

#[cfg(test)]
mod tests;
