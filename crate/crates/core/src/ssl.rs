//! Contrastive pretraining of the CNN and ViT encoders on unlabeled images.
//!
//! Two augmented views of each image are encoded, pooled, projected and
//! normalised; the normalised-temperature cross-entropy pulls the two views
//! of an image together and pushes the other images in the batch away.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{concat, Tape, Var};
use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::imaging::{gamma_correct, geometric_augment, GeometricOp, ImageU8, PreprocessConfig};
use crate::model::{encoder_forward, HybridModel};
use crate::nn::linear;
use crate::optim::{Adam, AdamConfig};
use crate::params::{xavier_uniform, Bound, ParamStore};
use crate::tensor::Tensor;

/// Parameter prefixes updated by pretraining and kept afterwards.
pub const ENCODER_PREFIXES: [&str; 2] = ["cnn.", "vit."];
const PROJECTION_PREFIX: &str = "ssl.";
const NORM_EPS: f64 = 1e-12;
/// Added to the self-similarity logits so they drop out of the softmax.
const MASKED: f64 = -1e9;

/// How each view is drawn from an image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentPolicy {
    /// Draw one of the five flips/rotations or none, uniformly.
    pub geometric: bool,
    /// Gamma is `exp(u)` with `u ~ U[−jitter, jitter]`; zero disables it.
    pub gamma_jitter: f64,
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self { geometric: false, gamma_jitter: 0.0 }
    }
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self { geometric: true, gamma_jitter: 0.4 }
    }
}

/// The operations that produced a view, in application order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewRecord {
    pub geometric: Option<GeometricOp>,
    pub gamma: f64,
}

impl ViewRecord {
    pub fn apply(&self, img: &ImageU8) -> Result<ImageU8> {
        let out = match self.geometric {
            Some(op) => geometric_augment(img, op),
            None => img.clone(),
        };
        if self.gamma == 1.0 {
            Ok(out)
        } else {
            gamma_correct(&out, self.gamma)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub image: ImageU8,
    pub record: ViewRecord,
}

fn draw_record<R: Rng + ?Sized>(policy: &AugmentPolicy, rng: &mut R) -> ViewRecord {
    let geometric = if policy.geometric {
        let k = rng.random_range(0..=GeometricOp::ALL.len());
        GeometricOp::ALL.get(k).copied()
    } else {
        None
    };
    let gamma = if policy.gamma_jitter > 0.0 { rng.random_range(-policy.gamma_jitter..=policy.gamma_jitter).exp() } else { 1.0 };
    ViewRecord { geometric, gamma }
}

/// Two independently augmented views of `img`.
pub fn make_views<R: Rng + ?Sized>(img: &ImageU8, policy: &AugmentPolicy, rng: &mut R) -> Result<(View, View)> {
    let a = draw_record(policy, rng);
    let b = draw_record(policy, rng);
    Ok((View { image: a.apply(img)?, record: a }, View { image: b.apply(img)?, record: b }))
}

/// NT-Xent over `2B` embeddings whose rows `2i` and `2i+1` are positives.
///
/// Each anchor's positive competes against every other row; the result is
/// the mean of `−ln softmax` over all anchors. Rows should already have
/// unit norm.
pub fn nt_xent_loss<'t>(z: Var<'t>, temperature: f64) -> Result<Var<'t>> {
    if !(temperature > 0.0) {
        return Err(Error::contract(format!("temperature {temperature} must be positive")));
    }
    let shape = z.shape();
    if shape.len() != 2 || shape[0] < 2 || !shape[0].is_multiple_of(2) {
        return Err(Error::contract(format!("need [2B×d] embeddings with B ≥ 1, got {shape:?}")));
    }
    let n = shape[0];
    let logits = z.matmul(z.transpose()?)?.scale(1.0 / temperature)?;
    let mask = z.tape().constant(Tensor::from_fn([n, n], |i| if i / n == i % n { MASKED } else { 0.0 }));
    let log_probs = logits.add(mask)?.log_softmax(1)?;
    let positives: Vec<usize> = (0..n).map(|i| i * n + (i ^ 1)).collect();
    log_probs.pick(&positives)?.mean()?.neg()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub projection_dim: usize,
    pub hidden_dim: usize,
    /// Images per batch; each contributes two views.
    pub batch_pairs: usize,
    pub epochs: usize,
    pub lr: f64,
    pub policy: AugmentPolicy,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            projection_dim: 32,
            hidden_dim: 64,
            batch_pairs: 8,
            epochs: 20,
            lr: 1e-3,
            policy: AugmentPolicy::default(),
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::contract("ssl.temperature must be positive"));
        }
        if self.projection_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::contract("ssl.projection_dim and ssl.hidden_dim must be at least 1"));
        }
        if self.batch_pairs < 2 {
            return Err(Error::contract("ssl.batch_pairs must be at least 2 so every anchor has negatives"));
        }
        if !(self.lr >= 0.0) || !(self.policy.gamma_jitter >= 0.0) {
            return Err(Error::contract("ssl.lr and ssl.gamma_jitter must be non-negative"));
        }
        Ok(())
    }
}

/// Pooled CNN and ViT features of one image, projected and normalised.
pub fn embed<'t>(backbone: &BackboneConfig, p: &Bound<'t, '_>, image: Var<'t>) -> Result<Var<'t>> {
    let (cnn, tokens) = encoder_forward(backbone, p, image)?;
    let pooled = concat(&[cnn.features, tokens.mean_rows()?], 0)?;
    let hidden = linear(pooled, p.var("ssl.proj.w1")?, Some(p.var("ssl.proj.b1")?))?.relu()?;
    linear(hidden, p.var("ssl.proj.w2")?, None)?.l2_normalize(NORM_EPS)
}

fn init_projection(backbone: &BackboneConfig, cfg: &ContrastiveConfig, store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55_4C);
    let input = backbone.cnn_dim() + backbone.embed_dim;
    store.insert("ssl.proj.w1", xavier_uniform(&[input, cfg.hidden_dim], input, cfg.hidden_dim, &mut rng));
    store.insert("ssl.proj.b1", Tensor::zeros([cfg.hidden_dim]));
    store.insert(
        "ssl.proj.w2",
        xavier_uniform(&[cfg.hidden_dim, cfg.projection_dim], cfg.hidden_dim, cfg.projection_dim, &mut rng),
    );
}

fn is_encoder(name: &str) -> bool {
    ENCODER_PREFIXES.iter().any(|p| name.starts_with(p))
}

pub struct PretrainOutcome {
    /// CNN and ViT parameters only; the projection head is discarded.
    pub params: ParamStore,
    /// Mean contrastive loss per epoch.
    pub history: Vec<f64>,
}

/// Contrastive pretraining from the encoder weights [`HybridModel::new`]
/// would create with `seed`.
///
/// Epoch `e` shuffles the images and draws views with seed `seed + e`; a
/// trailing batch of one image has no negatives and is skipped.
pub fn pretrain(
    images: &[ImageU8],
    backbone: &BackboneConfig,
    pre: &PreprocessConfig,
    cfg: &ContrastiveConfig,
    seed: u64,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if images.len() < 2 {
        return Err(Error::contract(format!("contrastive pretraining needs at least 2 images, got {}", images.len())));
    }
    let mut params = HybridModel::new(backbone.clone(), seed)?.params;
    params.retain(is_encoder);
    init_projection(backbone, cfg, &mut params, seed);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr))?;
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_pairs).filter(|c| c.len() >= 2) {
            let mut views = Vec::with_capacity(2 * chunk.len());
            for &i in chunk {
                let (a, b) = make_views(&images[i], &cfg.policy, &mut rng)?;
                views.push(pre.apply(&a.image)?);
                views.push(pre.apply(&b.image)?);
            }
            let tape = Tape::new();
            let bound = Bound::trainable(&tape, &params);
            let rows = views
                .into_iter()
                .map(|v| embed(backbone, &bound, tape.constant(v))?.reshape([1, cfg.projection_dim]))
                .collect::<Result<Vec<_>>>()?;
            let loss = nt_xent_loss(concat(&rows, 0)?, cfg.temperature)?;
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(Error::Divergence(format!("contrastive loss is {value} in epoch {epoch}")));
            }
            tape.backward(loss).map_err(|e| match e {
                Error::NonFinite { op } => Error::Divergence(format!("{op} produced a non-finite gradient in epoch {epoch}")),
                other => other,
            })?;
            let grads = bound.gradients();
            drop(bound);
            adam.step(&mut params, &grads)?;
            total += value;
            batches += 1;
        }
        let mean = total / batches.max(1) as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    params.retain(|name| !name.starts_with(PROJECTION_PREFIX));
    Ok(PretrainOutcome { params, history })
}
