//! Image preprocessing and classical augmentation.
//!
//! The fixed pipeline is resize → median denoise → contrast-limited adaptive
//! histogram equalization → (optional brightness) → gamma → per-channel
//! standardization. Every step is a pure function of its input bytes.

mod augment;
mod clahe;
mod median;
mod pnm;
mod resize;

pub use augment::{adaptive_gamma, adjust_brightness, gamma_correct, geometric_augment, GeometricOp};
pub use clahe::{adaptive_hist_eq, tile_lut};
pub use median::median_filter;
pub use pnm::{decode_pnm, encode_pnm, read_pnm, write_pnm};
pub use resize::{resize_bilinear, resize_nearest};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit image, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ImageU8 {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl ImageU8 {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim(format!("image extent {height}×{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::dim(format!("{channels} channels; expected 1 or 3")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::dim(format!(
                "{height}×{width}×{channels} image needs {} bytes, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        Ok(Self { height, width, channels, pixels })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: u8) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    /// One channel as a row-major plane.
    pub fn plane(&self, c: usize) -> Vec<u8> {
        self.pixels.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(y, x, c));
                }
            }
        }
        Self { height, width, channels, pixels }
    }

    /// Expands a grayscale image to three identical channels.
    pub fn to_rgb(&self) -> ImageU8 {
        if self.channels == 3 {
            return self.clone();
        }
        Self::from_fn(self.height, self.width, 3, |y, x, _| self.get(y, x, 0))
    }
}

/// Scales to `[0, 1]` and standardizes every channel of one image:
/// `(x − μ) / (σ + 1e-6)`.
pub fn to_model_tensor(img: &ImageU8) -> Tensor {
    let (h, w, c) = (img.height, img.width, img.channels);
    let n = (h * w) as f64;
    let mut stats = Vec::with_capacity(c);
    for ch in 0..c {
        // Moments in pixel units so constant planes cancel exactly.
        let sum: u64 = img.pixels.iter().skip(ch).step_by(c).map(|&p| p as u64).sum();
        let mean = sum as f64 / n;
        let var = img.pixels.iter().skip(ch).step_by(c).map(|&p| (p as f64 - mean).powi(2)).sum::<f64>() / n;
        stats.push((mean, var.sqrt() / 255.0 + 1e-6));
    }
    Tensor::from_fn([c, h, w], |i| {
        let (ch, rest) = (i / (h * w), i % (h * w));
        let (mean, denom) = stats[ch];
        (img.pixels[rest * c + ch] as f64 - mean) / 255.0 / denom
    })
}

/// `[C×H×W]` tensor with values `x/255`.
pub fn to_unit_tensor(img: &ImageU8) -> Tensor {
    let (h, w, c) = (img.height, img.width, img.channels);
    Tensor::from_fn([c, h, w], |i| {
        let (ch, rest) = (i / (h * w), i % (h * w));
        img.pixels[rest * c + ch] as f64 / 255.0
    })
}

/// `[C×H×W]` tensor with values `x/127.5 − 1`, the generator's range.
pub fn to_signed_tensor(img: &ImageU8) -> Tensor {
    let mut t = to_unit_tensor(img);
    t.data_mut().iter_mut().for_each(|v| *v = *v * 2.0 - 1.0);
    t
}

/// Inverse of [`to_signed_tensor`], rounding and clamping to bytes.
pub fn from_signed_tensor(t: &Tensor) -> Result<ImageU8> {
    if t.rank() != 3 {
        return Err(Error::dim(format!("expected [C×H×W], got {:?}", t.shape())));
    }
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    if c != 1 && c != 3 {
        return Err(Error::dim(format!("{c} channels; expected 1 or 3")));
    }
    Ok(ImageU8::from_fn(h, w, c, |y, x, ch| {
        let v = (t.data()[(ch * h + y) * w + x] + 1.0) * 127.5;
        v.round().clamp(0.0, 255.0) as u8
    }))
}

/// How gamma is chosen for each image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaMode {
    Fixed(f64),
    /// Pick the gamma that maps the image's mean intensity to mid-gray.
    Adaptive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub target_size: (usize, usize),
    pub median_window: usize,
    /// Tile edge length in pixels; edge tiles shrink when it does not divide the image.
    pub clahe_tile: usize,
    pub clahe_clip: f64,
    pub gamma: GammaMode,
    /// Additive brightness applied before gamma; zero disables it.
    pub beta: i32,
    pub normalize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_size: (224, 224),
            median_window: 3,
            clahe_tile: 8,
            clahe_clip: 2.0,
            gamma: GammaMode::Fixed(1.0),
            beta: 0,
            normalize: true,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_size.0 == 0 || self.target_size.1 == 0 {
            return Err(Error::contract("preprocess.target_size must be positive"));
        }
        if self.median_window == 0 || self.median_window.is_multiple_of(2) {
            return Err(Error::contract("preprocess.median_window must be odd and at least 1"));
        }
        if self.clahe_tile == 0 {
            return Err(Error::contract("preprocess.clahe_tile must be at least 1"));
        }
        if !(self.clahe_clip > 0.0) {
            return Err(Error::contract("preprocess.clahe_clip must be positive"));
        }
        if let GammaMode::Fixed(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::contract("preprocess.gamma must be positive"));
            }
        }
        Ok(())
    }

    /// Runs every byte-level step and returns the enhanced image.
    pub fn enhance(&self, img: &ImageU8) -> Result<ImageU8> {
        self.validate()?;
        let (h, w) = self.target_size;
        let mut out = if (img.height, img.width) == (h, w) { img.clone() } else { resize_bilinear(img, (h, w))? };
        out = median_filter(&out, self.median_window)?;
        out = adaptive_hist_eq(&out, self.clahe_tile, self.clahe_clip)?;
        if self.beta != 0 {
            out = adjust_brightness(&out, self.beta);
        }
        let gamma = match self.gamma {
            GammaMode::Fixed(g) => g,
            GammaMode::Adaptive => adaptive_gamma(&out),
        };
        gamma_correct(&out, gamma)
    }

    /// Full pipeline from raw bytes to a model input tensor.
    pub fn apply(&self, img: &ImageU8) -> Result<Tensor> {
        let enhanced = self.enhance(img)?;
        Ok(if self.normalize { to_model_tensor(&enhanced) } else { to_unit_tensor(&enhanced) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> ImageU8 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageU8::from_fn(h, w, c, |_, _, _| rng.random())
    }

    #[test]
    fn constant_image_standardizes_to_zero() {
        let img = ImageU8::filled(5, 4, 3, 77).unwrap();
        assert!(to_model_tensor(&img).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_channels_have_zero_mean_unit_std() {
        let img = random_image(9, 7, 3, 1);
        let t = to_model_tensor(&img);
        for ch in t.data().chunks(63) {
            let mean = ch.iter().copied().sum::<f64>() / 63.0;
            let std = (ch.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / 63.0).sqrt();
            assert!(mean.abs() <= 1e-4);
            assert!((std - 1.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn two_value_channel_maps_to_plus_minus_one() {
        let img = ImageU8::from_fn(4, 4, 1, |y, x, _| if (y + x) % 2 == 0 { 0 } else { 255 });
        let t = to_model_tensor(&img);
        // mean 0.5, population std 0.5 → ±0.5 / (0.5 + 1e-6)
        let expected = 0.5 / (0.5 + 1e-6);
        for (i, &v) in t.data().iter().enumerate() {
            let want = if (i / 4 + i % 4) % 2 == 0 { -expected } else { expected };
            assert!((v - want).abs() < 1e-6);
        }
    }

    #[test]
    fn signed_tensor_roundtrip() {
        let img = random_image(6, 5, 3, 2);
        assert_eq!(from_signed_tensor(&to_signed_tensor(&img)).unwrap(), img);
    }

    #[test]
    fn config_validation() {
        let mut cfg = PreprocessConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.median_window = 4;
        assert!(cfg.validate().is_err());
        cfg = PreprocessConfig { clahe_tile: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg = PreprocessConfig { gamma: GammaMode::Fixed(0.0), ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn pipeline_is_deterministic_and_sized() {
        let img = random_image(40, 30, 3, 3);
        let cfg = PreprocessConfig { target_size: (32, 32), gamma: GammaMode::Adaptive, beta: 5, ..Default::default() };
        let a = cfg.apply(&img).unwrap();
        let b = cfg.apply(&img).unwrap();
        assert_eq!(a.shape(), &[3, 32, 32]);
        assert!(a.bits_eq(&b));
        assert_eq!(cfg.enhance(&img).unwrap(), cfg.enhance(&img).unwrap());
    }
}
