//! Procedural stand-in for field imagery: one texture family per class,
//! with exact pixel masks and a growth score.

use std::f64::consts::PI;

use hwdm_core::imaging::ImageU8;
use hwdm_core::{PlantClass, NUM_CLASSES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Class shares of the imbalanced preset, indexed by class.
pub const IMBALANCED_SHARES: [f64; NUM_CLASSES] = [0.08, 0.23, 0.21, 0.48];

/// One rendered example.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub class: PlantClass,
    pub image: ImageU8,
    /// Class index per pixel; background pixels are soil.
    pub mask: Vec<u8>,
    /// 0 for bare soil, otherwise in [0.2, 1]; scales plant size and density.
    pub growth: f64,
}

/// Per-sample seed, independent of how many samples other classes have.
pub fn sample_seed(seed: u64, class: PlantClass, index: usize) -> u64 {
    let mut z = seed ^ ((class.index() as u64) << 56) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-class counts for `total` samples at the imbalanced shares, using
/// largest remainders so the counts sum to `total`.
pub fn imbalanced_counts(total: usize) -> [usize; NUM_CLASSES] {
    let exact: Vec<f64> = IMBALANCED_SHARES.iter().map(|s| s * total as f64).collect();
    let mut counts = [0; NUM_CLASSES];
    for (c, e) in exact.iter().enumerate() {
        counts[c] = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = total - counts.iter().sum::<usize>();
    for &c in order.iter().take(missing) {
        counts[c] += 1;
    }
    counts
}

struct Canvas {
    size: usize,
    rgb: Vec<[f64; 3]>,
    mask: Vec<u8>,
}

impl Canvas {
    fn soil(size: usize, rng: &mut ChaCha8Rng) -> Self {
        let n = size * size;
        let noise: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let smooth = box_blur(&box_blur(&noise, size), size);
        let tint: f64 = rng.random_range(-15.0..15.0);
        let rgb = (0..n)
            .map(|i| {
                let v = 70.0 * smooth[i] + 10.0 * noise[i] + tint;
                [125.0 + v, 90.0 + 0.8 * v, 60.0 + 0.6 * v]
            })
            .collect();
        Self { size, rgb, mask: vec![PlantClass::Soil.index() as u8; n] }
    }

    fn paint(&mut self, y: usize, x: usize, class: PlantClass, color: [f64; 3]) {
        let i = y * self.size + x;
        self.rgb[i] = color;
        self.mask[i] = class.index() as u8;
    }

    fn finish(self, rng: &mut ChaCha8Rng) -> (ImageU8, Vec<u8>) {
        let size = self.size;
        let rgb = self.rgb;
        let mut jitter = || rng.random_range(-6.0..6.0);
        let noise: Vec<f64> = (0..size * size * 3).map(|_| jitter()).collect();
        let img = ImageU8::from_fn(size, size, 3, |y, x, c| {
            let i = y * size + x;
            (rgb[i][c] + noise[i * 3 + c]).round().clamp(0.0, 255.0) as u8
        });
        (img, self.mask)
    }
}

fn box_blur(v: &[f64], size: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, size as isize - 1) as usize;
        let x = x.clamp(0, size as isize - 1) as usize;
        v[y * size + x]
    };
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as isize, (i % size) as isize);
            let mut s = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    s += at(y + dy, x + dx);
                }
            }
            s / 9.0
        })
        .collect()
}

/// Large smooth leaves: a few shaded ellipses.
fn broadleaf(c: &mut Canvas, g: f64, rng: &mut ChaCha8Rng) {
    let s = c.size as f64;
    let blobs = 1 + (2.0 * g).round() as usize;
    for _ in 0..blobs {
        let (cy, cx) = (rng.random_range(0.2..0.8) * s, rng.random_range(0.2..0.8) * s);
        let r = s * (0.12 + 0.10 * g);
        let (ry, rx) = (r * rng.random_range(0.8..1.2), r * rng.random_range(0.8..1.2));
        let theta: f64 = rng.random_range(0.0..PI);
        let shade = rng.random_range(-10.0..10.0);
        for y in 0..c.size {
            for x in 0..c.size {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let u = dx * theta.cos() + dy * theta.sin();
                let v = -dx * theta.sin() + dy * theta.cos();
                let d2 = (u / rx).powi(2) + (v / ry).powi(2);
                if d2 <= 1.0 {
                    let light = 1.0 - 0.25 * d2;
                    c.paint(y, x, PlantClass::Broadleaf, [70.0 * light + shade, 175.0 * light + shade, 55.0 * light]);
                }
            }
        }
    }
}

/// Thin, roughly vertical blades.
fn grass(c: &mut Canvas, g: f64, rng: &mut ChaCha8Rng) {
    let s = c.size as f64;
    let unit = s / 32.0;
    let blades = 2 + (3.0 * g).round() as usize;
    let half = unit * (1.5 + 0.5 * g);
    for _ in 0..blades {
        let theta: f64 = rng.random_range(-0.5..0.5);
        let x0 = rng.random_range(0.1..0.9) * s;
        let phase = rng.random_range(0.0..2.0 * PI);
        for y in 0..c.size {
            for x in 0..c.size {
                let (yf, xf) = (y as f64 + 0.5 - s / 2.0, x as f64 + 0.5);
                let dist = (xf - x0 - yf * theta.tan()) * theta.cos();
                if dist.abs() <= half {
                    let m = 12.0 * (yf * 0.4 / unit + phase).sin();
                    c.paint(y, x, PlantClass::Grass, [155.0 + m, 190.0 + m, 70.0]);
                }
            }
        }
    }
}

/// Evenly spaced crop rows of varying thickness.
fn soybean(c: &mut Canvas, g: f64, rng: &mut ChaCha8Rng) {
    let s = c.size as f64;
    let unit = s / 32.0;
    let period = 8.0 * unit;
    let angle: f64 = rng.random_range(-0.2..0.2);
    let offset = rng.random_range(0.0..period);
    let wobble = rng.random_range(0.0..2.0 * PI);
    for y in 0..c.size {
        for x in 0..c.size {
            let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
            let along = xf * angle.cos() + yf * angle.sin();
            let across = -xf * angle.sin() + yf * angle.cos() - offset;
            let d = across - period * (across / period).round();
            let half = unit * (1.5 + 1.5 * g) * (1.0 + 0.3 * (along * 0.8 / unit + wobble).sin());
            if d.abs() <= half {
                let m = 8.0 * (along * 1.3 / unit).cos();
                c.paint(y, x, PlantClass::Soybean, [35.0 + m, 105.0 + m, 40.0]);
            }
        }
    }
}

/// Renders one `size × size` example of `class`, fully determined by `seed`.
pub fn render_sample(class: PlantClass, size: usize, seed: u64) -> SyntheticSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut canvas = Canvas::soil(size, &mut rng);
    let growth = match class {
        PlantClass::Soil => 0.0,
        _ => rng.random_range(0.2..=1.0),
    };
    match class {
        PlantClass::Broadleaf => broadleaf(&mut canvas, growth, &mut rng),
        PlantClass::Grass => grass(&mut canvas, growth, &mut rng),
        PlantClass::Soybean => soybean(&mut canvas, growth, &mut rng),
        PlantClass::Soil => {}
    }
    let (image, mask) = canvas.finish(&mut rng);
    SyntheticSample { class, image, mask, growth }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imbalanced_preset_matches_shares() {
        assert_eq!(imbalanced_counts(600), [48, 138, 126, 288]);
        for total in [0, 1, 7, 100, 601] {
            assert_eq!(imbalanced_counts(total).iter().sum::<usize>(), total);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        for class in PlantClass::ALL {
            let a = render_sample(class, 32, sample_seed(3, class, 5));
            let b = render_sample(class, 32, sample_seed(3, class, 5));
            assert_eq!(a, b);
        }
        assert_ne!(sample_seed(3, PlantClass::Grass, 5), sample_seed(3, PlantClass::Grass, 6));
    }

    #[test]
    fn masks_only_use_the_sample_class_and_soil() {
        for class in PlantClass::ALL {
            for i in 0..20 {
                let s = render_sample(class, 32, sample_seed(9, class, i));
                assert_eq!(s.mask.len(), 32 * 32);
                let soil = PlantClass::Soil.index() as u8;
                assert!(s.mask.iter().all(|&m| m == soil || m == class.index() as u8));
                if class != PlantClass::Soil {
                    assert!(s.mask.iter().any(|&m| m == class.index() as u8), "{class} sample {i} has no plant");
                    assert!((0.2..=1.0).contains(&s.growth));
                } else {
                    assert_eq!(s.growth, 0.0);
                }
            }
        }
    }
}
