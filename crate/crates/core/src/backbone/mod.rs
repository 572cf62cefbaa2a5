//! Hybrid feature extractor: a convolutional branch, a patch-attention
//! branch, a graph network over the patch grid, and channel-attention
//! fusion of the three.

mod cnn;
mod fusion;
mod graph;
mod vit;

pub use cnn::{cnn_forward, CnnOutput, ConvBlock};
pub use fusion::{channel_attention, fuse_final, AttentionOutput, ChannelAttentionParams, FusionParams};
pub use graph::{build_plant_graph, gcn_layer, gnn_forward, GcnLayerParams, GnnOutput, PlantGraph};
pub use vit::{multi_head_self_attention, patch_embed, vit_encoder, AttentionHeads, MsaOutput, ViTParams};

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{he_uniform, xavier_uniform, ParamStore};
use crate::tensor::Tensor;

/// Input channels of every model image.
pub const IMAGE_CHANNELS: usize = 3;

/// Layer sizes of the feature extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub image_size: (usize, usize),
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    /// Number of pre-norm residual attention blocks.
    pub vit_depth: usize,
    pub cnn_channels: Vec<usize>,
    pub gcn_dims: Vec<usize>,
    pub fusion_dim: usize,
    /// Squeeze ratio of the channel-attention bottleneck.
    pub attention_reduction: usize,
}

impl BackboneConfig {
    /// Small configuration trainable on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            image_size: (32, 32),
            patch_size: 8,
            embed_dim: 32,
            num_heads: 4,
            vit_depth: 1,
            cnn_channels: vec![8, 16],
            gcn_dims: vec![16, 32],
            fusion_dim: 64,
            attention_reduction: 4,
        }
    }

    /// Full-size configuration: 224×224 input, 16×16 patches, 12 heads,
    /// GCN widths 64 and 128. Very slow on a CPU.
    pub fn paper() -> Self {
        Self {
            image_size: (224, 224),
            patch_size: 16,
            embed_dim: 768,
            num_heads: 12,
            vit_depth: 1,
            cnn_channels: vec![32, 64, 128, 256, 512],
            gcn_dims: vec![64, 128],
            fusion_dim: 512,
            attention_reduction: 4,
        }
    }

    /// Minimal configuration used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            image_size: (8, 8),
            patch_size: 4,
            embed_dim: 8,
            num_heads: 1,
            vit_depth: 1,
            cnn_channels: vec![4],
            gcn_dims: vec![4, 6],
            fusion_dim: 8,
            attention_reduction: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        let p = self.patch_size;
        if h == 0 || w == 0 || p == 0 {
            return Err(Error::contract("image size and patch size must be positive"));
        }
        if h % p != 0 || w % p != 0 {
            return Err(Error::contract(format!("patch size {p} does not divide image {h}x{w}")));
        }
        if self.embed_dim == 0 || self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::contract(format!("embed_dim {} not divisible by num_heads {}", self.embed_dim, self.num_heads)));
        }
        if self.vit_depth == 0 {
            return Err(Error::contract("vit_depth must be at least 1"));
        }
        if self.cnn_channels.is_empty() || self.cnn_channels.contains(&0) {
            return Err(Error::contract("cnn_channels must be non-empty and positive"));
        }
        let factor = 1usize << self.cnn_channels.len();
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::contract(format!("image {h}x{w} cannot be halved {} times", self.cnn_channels.len())));
        }
        if self.gcn_dims.is_empty() || self.gcn_dims.contains(&0) {
            return Err(Error::contract("gcn_dims must be non-empty and positive"));
        }
        if self.fusion_dim == 0 {
            return Err(Error::contract("fusion_dim must be positive"));
        }
        if self.attention_reduction == 0 || self.attention_channels() / self.attention_reduction == 0 {
            return Err(Error::contract(format!("attention reduction {} leaves no channels", self.attention_reduction)));
        }
        Ok(())
    }

    pub fn patch_grid(&self) -> (usize, usize) {
        (self.image_size.0 / self.patch_size, self.image_size.1 / self.patch_size)
    }

    pub fn num_patches(&self) -> usize {
        let (r, c) = self.patch_grid();
        r * c
    }

    pub fn patch_dim(&self) -> usize {
        IMAGE_CHANNELS * self.patch_size * self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn cnn_dim(&self) -> usize {
        *self.cnn_channels.last().expect("validated")
    }

    /// Spatial extent of the convolutional feature map.
    pub fn cnn_spatial(&self) -> (usize, usize) {
        let f = 1usize << self.cnn_channels.len();
        (self.image_size.0 / f, self.image_size.1 / f)
    }

    pub fn gnn_dim(&self) -> usize {
        *self.gcn_dims.last().expect("validated")
    }

    /// Width of the concatenated CNN and ViT features.
    pub fn attention_channels(&self) -> usize {
        self.cnn_channels.last().copied().unwrap_or(0) + self.embed_dim
    }

    pub fn attention_hidden(&self) -> usize {
        self.attention_channels() / self.attention_reduction
    }

    /// Serializes as `key=value` lines.
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        format!(
            "image_height={}\nimage_width={}\npatch_size={}\nembed_dim={}\nnum_heads={}\nvit_depth={}\n\
             cnn_channels={}\ngcn_dims={}\nfusion_dim={}\nattention_reduction={}\n",
            self.image_size.0,
            self.image_size.1,
            self.patch_size,
            self.embed_dim,
            self.num_heads,
            self.vit_depth,
            list(&self.cnn_channels),
            list(&self.gcn_dims),
            self.fusion_dim,
            self.attention_reduction
        )
    }

    /// Parses the output of [`BackboneConfig::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::desk();
        let mut seen = 0;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line.split_once('=').ok_or_else(|| Error::contract(format!("malformed config line {line:?}")))?;
            let num = || value.parse::<usize>().map_err(|_| Error::contract(format!("bad value for {key}: {value:?}")));
            let list = || -> Result<Vec<usize>> {
                value
                    .split(',')
                    .map(|v| v.trim().parse::<usize>().map_err(|_| Error::contract(format!("bad list for {key}"))))
                    .collect()
            };
            match key {
                "image_height" => cfg.image_size.0 = num()?,
                "image_width" => cfg.image_size.1 = num()?,
                "patch_size" => cfg.patch_size = num()?,
                "embed_dim" => cfg.embed_dim = num()?,
                "num_heads" => cfg.num_heads = num()?,
                "vit_depth" => cfg.vit_depth = num()?,
                "cnn_channels" => cfg.cnn_channels = list()?,
                "gcn_dims" => cfg.gcn_dims = list()?,
                "fusion_dim" => cfg.fusion_dim = num()?,
                "attention_reduction" => cfg.attention_reduction = num()?,
                other => return Err(Error::contract(format!("unknown config key {other:?}"))),
            }
            seen += 1;
        }
        if seen != 10 {
            return Err(Error::contract(format!("expected 10 config keys, found {seen}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Initializes every backbone parameter into `store`.
    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.validate()?;
        let mut c_in = IMAGE_CHANNELS;
        for (i, &c_out) in self.cnn_channels.iter().enumerate() {
            store.insert(format!("cnn.{i}.w"), he_uniform(&[c_out, c_in, 3, 3], c_in * 9, rng));
            store.insert(format!("cnn.{i}.b"), Tensor::zeros([c_out]));
            c_in = c_out;
        }
        let d = self.embed_dim;
        let pd = self.patch_dim();
        store.insert("vit.embed.w", xavier_uniform(&[pd, d], pd, d, rng));
        store.insert("vit.pos", Tensor::randn([self.num_patches(), d], 0.02, rng));
        for l in 0..self.vit_depth {
            for m in ["q", "k", "v"] {
                store.insert(format!("vit.{l}.{m}"), xavier_uniform(&[d, d], d, d, rng));
            }
        }
        let mut g_in = d;
        for (l, &g_out) in self.gcn_dims.iter().enumerate() {
            store.insert(format!("gcn.{l}.w"), he_uniform(&[g_in, g_out], g_in, rng));
            g_in = g_out;
        }
        let c = self.attention_channels();
        let hdim = self.attention_hidden();
        store.insert("att.w1", he_uniform(&[c, hdim], c, rng));
        store.insert("att.w2", xavier_uniform(&[hdim, c], hdim, c, rng));
        let fin = c + self.gnn_dim();
        store.insert("fuse.w", he_uniform(&[fin, self.fusion_dim], fin, rng));
        store.insert("fuse.b", Tensor::zeros([self.fusion_dim]));
        Ok(())
    }
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::desk()
    }
}
