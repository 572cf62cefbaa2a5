//! The full multi-task network: backbone plus classification,
//! segmentation and growth heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{concat, Tape, Var};
use crate::backbone::{
    build_plant_graph, channel_attention, cnn_forward, fuse_final, gnn_forward, patch_embed, vit_encoder, AttentionHeads,
    AttentionOutput, BackboneConfig, ChannelAttentionParams, CnnOutput, ConvBlock, FusionParams, GcnLayerParams, GnnOutput,
    IMAGE_CHANNELS,
};
use crate::dataset::{Sample, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::heads::{
    classify_head, cross_entropy, dice_loss, growth_head, mse_loss, segment_head, total_loss, LossReport, LossWeights, TaskLosses,
};
use crate::nn::Activation;
use crate::params::{xavier_uniform, Bound, Gradients, ParamStore};
use crate::tensor::Tensor;

/// Intermediate features of one backbone pass.
#[derive(Clone, Debug)]
pub struct BackboneOutputs<'t> {
    pub cnn: CnnOutput<'t>,
    /// Patch tokens after the attention blocks, `[N × d]`.
    pub tokens: Var<'t>,
    /// Mean of `tokens` over patches, `[d]`.
    pub vit_pooled: Var<'t>,
    pub gnn: GnnOutput<'t>,
    pub attention: AttentionOutput<'t>,
    /// CNN feature map scaled by its channel-attention gates, `[C, h, w]`.
    pub gated_spatial: Var<'t>,
    /// Fused representation fed to the classification and growth heads.
    pub fused: Var<'t>,
}

#[derive(Clone, Debug)]
pub struct ModelOutputs<'t> {
    pub backbone: BackboneOutputs<'t>,
    /// `[NUM_CLASSES]`
    pub class_probs: Var<'t>,
    /// `[NUM_CLASSES, H, W]`
    pub seg_mask: Var<'t>,
    /// Scalar.
    pub growth: Var<'t>,
}

fn check_input(cfg: &BackboneConfig, image: &Var<'_>) -> Result<()> {
    let (h, w) = cfg.image_size;
    if image.shape() != [IMAGE_CHANNELS, h, w] {
        return Err(Error::dim(format!("expected input [{IMAGE_CHANNELS}, {h}, {w}], got {:?}", image.shape())));
    }
    Ok(())
}

/// Convolutional and attention branches only; these are what contrastive
/// pretraining touches.
pub fn encoder_forward<'t>(cfg: &BackboneConfig, p: &Bound<'t, '_>, image: Var<'t>) -> Result<(CnnOutput<'t>, Var<'t>)> {
    check_input(cfg, &image)?;
    let blocks = (0..cfg.cnn_channels.len())
        .map(|i| Ok(ConvBlock { kernels: p.var(&format!("cnn.{i}.w"))?, bias: p.var(&format!("cnn.{i}.b"))? }))
        .collect::<Result<Vec<_>>>()?;
    let cnn = cnn_forward(image, &blocks)?;
    let heads = (0..cfg.vit_depth)
        .map(|l| {
            Ok(AttentionHeads {
                query: p.var(&format!("vit.{l}.q"))?,
                key: p.var(&format!("vit.{l}.k"))?,
                value: p.var(&format!("vit.{l}.v"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let embedded = patch_embed(image, cfg.patch_size, p.var("vit.embed.w")?, p.var("vit.pos")?)?;
    let tokens = vit_encoder(embedded, &heads, cfg.num_heads)?;
    Ok((cnn, tokens))
}

pub fn backbone_forward<'t>(cfg: &BackboneConfig, p: &Bound<'t, '_>, image: Var<'t>) -> Result<BackboneOutputs<'t>> {
    let (cnn, tokens) = encoder_forward(cfg, p, image)?;
    let vit_pooled = tokens.mean_rows()?;
    let graph = build_plant_graph(tokens, cfg.patch_grid())?;
    let layers = (0..cfg.gcn_dims.len())
        .map(|l| Ok(GcnLayerParams { weight: p.var(&format!("gcn.{l}.w"))?, activation: Activation::Relu }))
        .collect::<Result<Vec<_>>>()?;
    let gnn = gnn_forward(&graph, &layers)?;
    let joined = concat(&[cnn.features, vit_pooled], 0)?;
    let attention = channel_attention(joined, &ChannelAttentionParams { w1: p.var("att.w1")?, w2: p.var("att.w2")? })?;
    let fused = fuse_final(attention.output, gnn.pooled, &FusionParams { weight: p.var("fuse.w")?, bias: p.var("fuse.b")? })?;
    // The gates see both branches; applied to the spatial map they carry
    // image-level context into the per-pixel head.
    let cnn_gates = attention.gates.slice(0, 0, cfg.cnn_dim())?;
    let gated_spatial = cnn.spatial.broadcast_mul(cnn_gates, 0)?;
    Ok(BackboneOutputs { cnn, tokens, vit_pooled, gnn, attention, gated_spatial, fused })
}

pub fn model_forward<'t>(cfg: &BackboneConfig, p: &Bound<'t, '_>, image: Var<'t>) -> Result<ModelOutputs<'t>> {
    let backbone = backbone_forward(cfg, p, image)?;
    let class_probs = classify_head(backbone.fused, p.var("head.cls.w")?, p.var("head.cls.b")?)?;
    let seg_mask = segment_head(backbone.gated_spatial, p.var("head.seg.w")?, p.var("head.seg.b")?, cfg.image_size)?;
    let growth = growth_head(backbone.fused, p.var("head.growth.w")?, p.var("head.growth.b")?)?;
    Ok(ModelOutputs { backbone, class_probs, seg_mask, growth })
}

/// Composite loss of one sample; mask and growth terms appear only when
/// the sample carries those targets.
pub fn sample_loss<'t>(outputs: &ModelOutputs<'t>, sample: &Sample, weights: &LossWeights) -> Result<(Var<'t>, LossReport)> {
    let cls = Some(cross_entropy(outputs.class_probs, sample.label.index())?);
    let seg = match sample.mask_one_hot()? {
        Some(truth) => Some(dice_loss(outputs.seg_mask, &truth)?),
        None => None,
    };
    let growth = match sample.growth {
        Some(y) => Some(mse_loss(outputs.growth, y)?),
        None => None,
    };
    total_loss(&TaskLosses { cls, seg, growth }, weights)
}

/// Inference result for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class_probs: Tensor,
    pub seg_mask: Tensor,
    pub growth: f64,
}

impl Prediction {
    pub fn predicted_class(&self) -> usize {
        self.class_probs.argmax()
    }

    /// Most probable class per pixel, row-major.
    pub fn mask_labels(&self) -> Vec<u8> {
        let s = self.seg_mask.shape();
        let (k, hw) = (s[0], s[1] * s[2]);
        let d = self.seg_mask.data();
        (0..hw)
            .map(|i| {
                let mut best = 0;
                for c in 1..k {
                    if d[c * hw + i] > d[best * hw + i] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }
}

/// Configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridModel {
    pub config: BackboneConfig,
    pub params: ParamStore,
}

impl HybridModel {
    /// Randomly initialized model; identical for identical seeds.
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        config.init_params(&mut params, &mut rng)?;
        let f = config.fusion_dim;
        params.insert("head.cls.w", xavier_uniform(&[f, NUM_CLASSES], f, NUM_CLASSES, &mut rng));
        params.insert("head.cls.b", Tensor::zeros([NUM_CLASSES]));
        params.insert("head.growth.w", xavier_uniform(&[f, 1], f, 1, &mut rng));
        params.insert("head.growth.b", Tensor::full([1], 0.5));
        let c = config.cnn_dim();
        params.insert("head.seg.w", xavier_uniform(&[NUM_CLASSES, c, 1, 1], c, NUM_CLASSES, &mut rng));
        params.insert("head.seg.b", Tensor::zeros([NUM_CLASSES]));
        Ok(Self { config, params })
    }

    pub fn from_parts(config: BackboneConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let model = Self { config, params };
        let probe = HybridModel::new(model.config.clone(), 0)?;
        for (name, t) in probe.params.iter() {
            let have = model.params.get(name)?;
            if have.shape() != t.shape() {
                return Err(Error::dim(format!("parameter {name} has shape {:?}, expected {:?}", have.shape(), t.shape())));
            }
        }
        Ok(model)
    }

    pub fn predict(&self, image: &Tensor) -> Result<Prediction> {
        let tape = Tape::new();
        let bound = Bound::frozen(&tape, &self.params);
        let out = model_forward(&self.config, &bound, tape.constant(image.clone()))?;
        Ok(Prediction {
            class_probs: out.class_probs.to_tensor(),
            seg_mask: out.seg_mask.to_tensor(),
            growth: out.growth.item()?,
        })
    }

    /// Batch objective and predicted classes, without gradients.
    pub fn batch_loss(&self, batch: &[&Sample], weights: &LossWeights) -> Result<(LossReport, Vec<usize>)> {
        let tape = Tape::new();
        let bound = Bound::frozen(&tape, &self.params);
        let (_, report, predicted) = batch_objective(&self.config, &bound, batch, weights)?;
        Ok((report, predicted))
    }

    /// Batch objective, predicted classes and parameter gradients.
    pub fn batch_gradients(&self, batch: &[&Sample], weights: &LossWeights) -> Result<(LossReport, Vec<usize>, Gradients)> {
        let tape = Tape::new();
        let bound = Bound::trainable(&tape, &self.params);
        let (loss, report, predicted) = batch_objective(&self.config, &bound, batch, weights)?;
        tape.backward(loss)?;
        Ok((report, predicted, bound.gradients()))
    }

    /// Loss, predicted class and parameter gradients for one sample.
    pub fn sample_gradients(&self, sample: &Sample, weights: &LossWeights) -> Result<(LossReport, usize, Gradients)> {
        let (report, predicted, grads) = self.batch_gradients(&[sample], weights)?;
        Ok((report, predicted[0], grads))
    }
}

/// Multi-task objective over a batch.
///
/// Classification and growth terms are means over the samples carrying
/// those targets. The Dice term treats the stacked masks of the batch as
/// one volume, so a class missing from a single image is not pushed to
/// zero everywhere. For one sample this equals [`sample_loss`].
pub fn batch_objective<'t>(
    cfg: &BackboneConfig,
    p: &Bound<'t, '_>,
    batch: &[&Sample],
    weights: &LossWeights,
) -> Result<(Var<'t>, LossReport, Vec<usize>)> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let tape = p.tape();
    let mut predicted = Vec::with_capacity(batch.len());
    let (mut cls, mut growth, mut masks, mut truths) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for sample in batch {
        let out = model_forward(cfg, p, tape.constant(sample.image.clone()))?;
        predicted.push(out.class_probs.value().argmax());
        cls.push(cross_entropy(out.class_probs, sample.label.index())?);
        if let Some(y) = sample.growth {
            growth.push(mse_loss(out.growth, y)?);
        }
        if let Some(truth) = sample.mask_one_hot()? {
            masks.push(out.seg_mask);
            truths.push(tape.constant(truth));
        }
    }
    let seg = if masks.is_empty() { None } else { Some(dice_loss(concat(&masks, 1)?, &concat(&truths, 1)?.to_tensor())?) };
    let losses = TaskLosses { cls: mean_of(&cls)?, seg, growth: mean_of(&growth)? };
    let (loss, report) = total_loss(&losses, weights)?;
    Ok((loss, report, predicted))
}

fn mean_of<'t>(terms: &[Var<'t>]) -> Result<Option<Var<'t>>> {
    match terms {
        [] => Ok(None),
        [one] => Ok(Some(*one)),
        _ => {
            let stacked = concat(&terms.iter().map(|t| t.reshape([1])).collect::<Result<Vec<_>>>()?, 0)?;
            Ok(Some(stacked.mean()?))
        }
    }
}

#[cfg(test)]
mod tests;
