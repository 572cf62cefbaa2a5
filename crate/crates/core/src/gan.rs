//! Conditional DCGAN-style generator and discriminator used to top up
//! under-represented classes.
//!
//! The generator maps `z ‖ embed(label)` through a linear layer to a
//! quarter-resolution feature map, then doubles resolution twice with
//! nearest-neighbour upsampling followed by 3×3 convolutions. The
//! discriminator downsamples with two stride-2 convolutions, pools, and
//! concatenates a label embedding before the final logit.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{concat, Tape, Var};
use crate::dataset::{PlantClass, Sample, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::imaging::{from_signed_tensor, ImageU8, PreprocessConfig};
use crate::nn::linear;
use crate::optim::{Adam, AdamConfig};
use crate::params::{xavier_uniform, Bound, Gradients, ParamStore};
use crate::tensor::Tensor;

const LEAK: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub image_size: (usize, usize),
    /// Channels of the widest feature map; the other stage uses half.
    pub channels: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            image_size: (32, 32),
            channels: 32,
            embed_dim: 8,
            epochs: 50,
            batch_size: 16,
            lr: 2e-4,
            beta1: 0.5,
        }
    }
}

impl GanConfig {
    /// 8×8 images, small latent: for smoke runs and gradient checks.
    pub fn smoke() -> Self {
        Self { latent_dim: 16, image_size: (8, 8), channels: 8, embed_dim: 4, batch_size: 8, lr: 1e-3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::contract("gan.latent_dim must be at least 1"));
        }
        let (h, w) = self.image_size;
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::contract(format!("gan image size {h}x{w} must be positive multiples of 4")));
        }
        if self.channels < 2 || self.embed_dim == 0 {
            return Err(Error::contract("gan.channels must be at least 2 and gan.embed_dim at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("gan.batch_size must be at least 1"));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::contract("gan.lr must be non-negative and gan.beta1 in [0, 1)"));
        }
        Ok(())
    }

    fn wide(&self) -> usize {
        self.channels
    }

    fn narrow(&self) -> usize {
        self.channels / 2
    }

    fn seed_grid(&self) -> (usize, usize) {
        (self.image_size.0 / 4, self.image_size.1 / 4)
    }

    /// Freshly initialised generator and discriminator parameters.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c0, c1, e) = (self.wide(), self.narrow(), self.embed_dim);
        let (sh, sw) = self.seed_grid();
        let mut p = ParamStore::new();
        let input = self.latent_dim + e;
        p.insert("gan.g.embed", Tensor::uniform([NUM_CLASSES, e], -1.0, 1.0, &mut rng));
        p.insert("gan.g.fc.w", xavier_uniform(&[input, c0 * sh * sw], input, c0 * sh * sw, &mut rng));
        p.insert("gan.g.fc.b", Tensor::zeros([c0 * sh * sw]));
        p.insert("gan.g.up1.w", xavier_uniform(&[c1, c0, 3, 3], c0 * 9, c1 * 9, &mut rng));
        p.insert("gan.g.up1.b", Tensor::zeros([c1]));
        p.insert("gan.g.up2.w", xavier_uniform(&[3, c1, 3, 3], c1 * 9, 27, &mut rng));
        p.insert("gan.g.up2.b", Tensor::zeros([3]));
        p.insert("gan.d.conv1.w", xavier_uniform(&[c1, 3, 3, 3], 27, c1 * 9, &mut rng));
        p.insert("gan.d.conv1.b", Tensor::zeros([c1]));
        p.insert("gan.d.conv2.w", xavier_uniform(&[c0, c1, 3, 3], c1 * 9, c0 * 9, &mut rng));
        p.insert("gan.d.conv2.b", Tensor::zeros([c0]));
        p.insert("gan.d.embed", Tensor::uniform([NUM_CLASSES, e], -1.0, 1.0, &mut rng));
        p.insert("gan.d.out.w", xavier_uniform(&[c0 + e, 1], c0 + e, 1, &mut rng));
        p.insert("gan.d.out.b", Tensor::zeros([1]));
        Ok(p)
    }

    /// Recovers the architecture hyper-parameters from parameter shapes.
    /// Training settings keep their defaults.
    pub fn from_params(params: &ParamStore) -> Result<Self> {
        let embed = params.get("gan.g.embed")?.shape().to_vec();
        let fc = params.get("gan.g.fc.w")?.shape().to_vec();
        let up1 = params.get("gan.g.up1.w")?.shape().to_vec();
        let (e, c0) = (embed[1], up1[1]);
        let latent_dim = fc[0].checked_sub(e).ok_or_else(|| Error::dim("gan.g.fc.w narrower than the embedding"))?;
        let cells = fc[1] / c0;
        let side = (cells as f64).sqrt().round() as usize;
        if side * side != cells {
            return Err(Error::dim("gan checkpoint seed grid is not square"));
        }
        let cfg = Self { latent_dim, image_size: (4 * side, 4 * side), channels: c0, embed_dim: e, ..Self::default() };
        let fresh = cfg.init_params(0)?;
        for (name, t) in fresh.iter() {
            if params.get(name)?.shape() != t.shape() {
                return Err(Error::dim(format!(
                    "{name}: checkpoint shape {:?}, expected {:?}",
                    params.get(name)?.shape(),
                    t.shape()
                )));
            }
        }
        Ok(cfg)
    }
}

fn embedding<'t>(p: &Bound<'t, '_>, table: &str, label: usize, dim: usize) -> Result<Var<'t>> {
    if label >= NUM_CLASSES {
        return Err(Error::contract(format!("label {label} outside 0..{NUM_CLASSES}")));
    }
    p.var(table)?.pick(&(label * dim..(label + 1) * dim).collect::<Vec<_>>())
}

/// Generator forward pass: `z` of length `latent_dim` to a `[3×H×W]` image in (−1, 1).
pub fn generator_forward<'t>(cfg: &GanConfig, p: &Bound<'t, '_>, z: Var<'t>, label: usize) -> Result<Var<'t>> {
    if z.shape() != [cfg.latent_dim] {
        return Err(Error::dim(format!("latent of shape {:?}, expected [{}]", z.shape(), cfg.latent_dim)));
    }
    let e = embedding(p, "gan.g.embed", label, cfg.embed_dim)?;
    let (sh, sw) = cfg.seed_grid();
    let h =
        linear(concat(&[z, e], 0)?, p.var("gan.g.fc.w")?, Some(p.var("gan.g.fc.b")?))?.reshape([cfg.wide(), sh, sw])?.relu()?;
    let h = h.upsample2()?.conv2d(p.var("gan.g.up1.w")?, 1, 1)?.broadcast_add(p.var("gan.g.up1.b")?, 0)?.relu()?;
    h.upsample2()?.conv2d(p.var("gan.g.up2.w")?, 1, 1)?.broadcast_add(p.var("gan.g.up2.b")?, 0)?.tanh()
}

/// Discriminator pre-sigmoid score for image `x` conditioned on `label`.
pub fn discriminator_logit<'t>(cfg: &GanConfig, p: &Bound<'t, '_>, x: Var<'t>, label: usize) -> Result<Var<'t>> {
    let (h, w) = cfg.image_size;
    if x.shape() != [3, h, w] {
        return Err(Error::dim(format!("discriminator input {:?}, expected [3, {h}, {w}]", x.shape())));
    }
    let f = x.conv2d(p.var("gan.d.conv1.w")?, 2, 1)?.broadcast_add(p.var("gan.d.conv1.b")?, 0)?.leaky_relu(LEAK)?;
    let f = f.conv2d(p.var("gan.d.conv2.w")?, 2, 1)?.broadcast_add(p.var("gan.d.conv2.b")?, 0)?.leaky_relu(LEAK)?;
    let e = embedding(p, "gan.d.embed", label, cfg.embed_dim)?;
    linear(concat(&[f.gap()?, e], 0)?, p.var("gan.d.out.w")?, Some(p.var("gan.d.out.b")?))?.reshape(Vec::new())
}

/// Generator and discriminator weights plus the settings that shaped them.
#[derive(Clone, Debug)]
pub struct Gan {
    pub config: GanConfig,
    pub params: ParamStore,
    /// False until at least one training step has run (or the weights came
    /// from a generator checkpoint).
    pub trained: bool,
}

impl Gan {
    pub fn new(config: GanConfig, seed: u64) -> Result<Self> {
        let params = config.init_params(seed)?;
        Ok(Self { config, params, trained: false })
    }

    /// Wraps weights loaded from a checkpoint; they count as trained.
    pub fn from_params(params: ParamStore) -> Result<Self> {
        Ok(Self { config: GanConfig::from_params(&params)?, params, trained: true })
    }

    /// Deterministic image for latent `z` and `label`.
    pub fn generate(&self, z: &Tensor, label: usize) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = Bound::frozen(&tape, &self.params);
        Ok(generator_forward(&self.config, &bound, tape.constant(z.clone()), label)?.to_tensor())
    }

    /// Probability that `x` is a real image of class `label`.
    pub fn discriminate(&self, x: &Tensor, label: usize) -> Result<f64> {
        let tape = Tape::new();
        let bound = Bound::frozen(&tape, &self.params);
        discriminator_logit(&self.config, &bound, tape.constant(x.clone()), label)?.sigmoid()?.item()
    }

    /// A standard-normal latent drawn from `seed`.
    pub fn latent(&self, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_latent(self.config.latent_dim, &mut rng)
    }

    /// Byte image of class `label` from the latent drawn with `seed`.
    pub fn synthesize(&self, label: PlantClass, seed: u64) -> Result<ImageU8> {
        from_signed_tensor(&self.generate(&self.latent(seed), label.index())?)
    }
}

fn sample_latent(dim: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn([dim], |_| StandardNormal.sample(rng))
}

/// Adversarial optimisation state: separate Adam moments for the two nets.
pub struct GanTrainer {
    pub gan: Gan,
    d_opt: Adam,
    g_opt: Adam,
    rng: ChaCha8Rng,
}

fn keep_prefix(mut grads: Gradients, prefix: &str) -> Gradients {
    grads.retain(|name| name.starts_with(prefix));
    grads
}

fn finite(value: f64, what: &str, step: u64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Divergence(format!("{what} is {value} at step {step}")))
    }
}

fn divergence(e: Error, what: &str, step: u64) -> Error {
    match e {
        Error::NonFinite { op } => Error::Divergence(format!("{what}: {op} produced a non-finite value at step {step}")),
        other => other,
    }
}

impl GanTrainer {
    pub fn new(gan: Gan, seed: u64) -> Result<Self> {
        let opt = AdamConfig { lr: gan.config.lr, beta1: gan.config.beta1, ..AdamConfig::default() };
        Ok(Self { d_opt: Adam::new(opt)?, g_opt: Adam::new(opt)?, gan, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    fn latents(&mut self, n: usize) -> Vec<Tensor> {
        (0..n).map(|_| sample_latent(self.gan.config.latent_dim, &mut self.rng)).collect()
    }

    /// One discriminator update on `batch` (real images in the generator's
    /// value range) against the same number of fresh fakes with matching
    /// labels. Returns the loss before the update.
    pub fn discriminator_step(&mut self, batch: &[(Tensor, usize)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::contract("empty GAN batch"));
        }
        let step = self.d_opt.steps() + 1;
        let fakes = self
            .latents(batch.len())
            .iter()
            .zip(batch)
            .map(|(z, (_, label))| self.gan.generate(z, *label))
            .collect::<Result<Vec<_>>>()?;
        let cfg = &self.gan.config;
        let tape = Tape::new();
        let bound = Bound::trainable(&tape, &self.gan.params);
        let mut terms = Vec::with_capacity(2 * batch.len());
        for ((real, label), fake) in batch.iter().zip(&fakes) {
            let real_logit = discriminator_logit(cfg, &bound, tape.constant(real.clone()), *label)?;
            let fake_logit = discriminator_logit(cfg, &bound, tape.constant(fake.clone()), *label)?;
            // −ln σ(a) = softplus(−a), −ln(1 − σ(a)) = softplus(a)
            terms.push(real_logit.neg()?.softplus()?.reshape([1])?);
            terms.push(fake_logit.softplus()?.reshape([1])?);
        }
        let loss = concat(&terms, 0)?.sum()?.scale(1.0 / batch.len() as f64)?;
        let value = finite(loss.item()?, "discriminator loss", step)?;
        tape.backward(loss).map_err(|e| divergence(e, "discriminator backward", step))?;
        let grads = keep_prefix(bound.gradients(), "gan.d.");
        drop(bound);
        self.d_opt.step(&mut self.gan.params, &grads)?;
        Ok(value)
    }

    /// One non-saturating generator update: minimise `−ln D(G(z))`.
    pub fn generator_step(&mut self, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::contract("empty GAN batch"));
        }
        let step = self.g_opt.steps() + 1;
        let zs = self.latents(labels.len());
        let cfg = &self.gan.config;
        let tape = Tape::new();
        let bound = Bound::trainable(&tape, &self.gan.params);
        let mut terms = Vec::with_capacity(labels.len());
        for (z, &label) in zs.iter().zip(labels) {
            let fake = generator_forward(cfg, &bound, tape.constant(z.clone()), label)?;
            terms.push(discriminator_logit(cfg, &bound, fake, label)?.neg()?.softplus()?.reshape([1])?);
        }
        let loss = concat(&terms, 0)?.mean()?;
        let value = finite(loss.item()?, "generator loss", step)?;
        tape.backward(loss).map_err(|e| divergence(e, "generator backward", step))?;
        let grads = keep_prefix(bound.gradients(), "gan.g.");
        drop(bound);
        self.g_opt.step(&mut self.gan.params, &grads)?;
        Ok(value)
    }

    /// Discriminator update followed by a generator update; `(d_loss, g_loss)`.
    pub fn step(&mut self, batch: &[(Tensor, usize)]) -> Result<(f64, f64)> {
        let d = self.discriminator_step(batch)?;
        let labels: Vec<usize> = batch.iter().map(|(_, l)| *l).collect();
        let g = self.generator_step(&labels)?;
        self.gan.trained = true;
        Ok((d, g))
    }
}

/// Mean losses of one GAN epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanEpoch {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

/// Trains a fresh GAN on `data` (images already in the generator's value
/// range and size). Epoch `e` shuffles with `seed + e`.
pub fn train_gan(
    data: &[(Tensor, usize)],
    config: &GanConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&GanEpoch),
) -> Result<(Gan, Vec<GanEpoch>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::contract("no images to train the GAN on"));
    }
    let mut trainer = GanTrainer::new(Gan::new(config.clone(), seed)?, seed)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64)));
        let (mut d_sum, mut g_sum) = (0.0, 0.0);
        let chunks = order.chunks(config.batch_size);
        let n = chunks.len() as f64;
        for chunk in chunks {
            let batch: Vec<(Tensor, usize)> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (d, g) = trainer.step(&batch)?;
            d_sum += d;
            g_sum += g;
        }
        let record = GanEpoch { epoch, d_loss: d_sum / n, g_loss: g_sum / n };
        on_epoch(&record);
        history.push(record);
    }
    Ok((trainer.gan, history))
}

/// Every class topped up to the largest class count.
pub fn balanced_targets(counts: &[usize; NUM_CLASSES]) -> [usize; NUM_CLASSES] {
    [*counts.iter().max().unwrap_or(&0); NUM_CLASSES]
}

/// Classes to synthesise, in class order, so each count reaches its target.
pub fn generation_plan(counts: &[usize; NUM_CLASSES], targets: &[usize; NUM_CLASSES]) -> Vec<PlantClass> {
    PlantClass::ALL.iter().flat_map(|&c| std::iter::repeat_n(c, targets[c.index()].saturating_sub(counts[c.index()]))).collect()
}

/// Seed of the `index`-th synthetic image of `class`.
pub fn synthesis_seed(seed: u64, class: PlantClass, index: usize) -> u64 {
    let mut x = seed ^ ((class.index() as u64) << 56) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Appends generated samples until every class reaches `targets`.
///
/// Originals are kept in place and untouched. Generated images go through
/// `pre` (which also resizes them) and carry no mask or growth target.
pub fn rebalance(
    mut dataset: Vec<Sample>,
    targets: &[usize; NUM_CLASSES],
    gan: &Gan,
    pre: &PreprocessConfig,
    seed: u64,
) -> Result<Vec<Sample>> {
    if !gan.trained {
        return Err(Error::contract("rebalancing needs a trained generator"));
    }
    let counts = crate::dataset::class_counts(&dataset);
    let mut next = [0usize; NUM_CLASSES];
    for class in generation_plan(&counts, targets) {
        let i = next[class.index()];
        next[class.index()] += 1;
        let img = gan.synthesize(class, synthesis_seed(seed, class, i))?;
        dataset.push(Sample {
            id: format!("gan-{}-{i:05}", class.name()),
            image: pre.apply(&img)?,
            label: class,
            mask: None,
            growth: None,
            synthetic: true,
        });
    }
    Ok(dataset)
}
