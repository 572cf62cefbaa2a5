//! Seeded inputs shared by the benchmarks.

use hwdm_core::{BackboneConfig, ImageU8, PlantClass, Sample, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn noise_image(height: usize, width: usize, channels: usize, seed: u64) -> ImageU8 {
    let mut r = rng(seed);
    ImageU8::from_fn(height, width, channels, |_, _, _| r.random())
}

/// A labelled sample with a random image and mask at the config's size.
pub fn sample(cfg: &BackboneConfig, seed: u64) -> Sample {
    let mut r = rng(seed);
    let (h, w) = cfg.image_size;
    Sample {
        id: format!("bench_{seed}"),
        image: Tensor::uniform([3, h, w], -1.0, 1.0, &mut r),
        label: PlantClass::ALL[r.random_range(0..PlantClass::ALL.len())],
        mask: Some((0..h * w).map(|_| r.random_range(0..4)).collect()),
        growth: Some(r.random()),
        synthetic: false,
    }
}
