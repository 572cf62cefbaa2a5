use super::ImageU8;
use crate::error::{Error, Result};

/// Lossless flips and quarter-turn rotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GeometricOp {
    HFlip,
    VFlip,
    /// Quarter turn clockwise.
    Rot90,
    Rot180,
    Rot270,
}

impl GeometricOp {
    pub const ALL: [GeometricOp; 5] =
        [GeometricOp::HFlip, GeometricOp::VFlip, GeometricOp::Rot90, GeometricOp::Rot180, GeometricOp::Rot270];
}

pub fn geometric_augment(img: &ImageU8, op: GeometricOp) -> ImageU8 {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    match op {
        GeometricOp::HFlip => ImageU8::from_fn(h, w, c, |y, x, ch| img.get(y, w - 1 - x, ch)),
        GeometricOp::VFlip => ImageU8::from_fn(h, w, c, |y, x, ch| img.get(h - 1 - y, x, ch)),
        GeometricOp::Rot180 => ImageU8::from_fn(h, w, c, |y, x, ch| img.get(h - 1 - y, w - 1 - x, ch)),
        GeometricOp::Rot90 => ImageU8::from_fn(w, h, c, |y, x, ch| img.get(h - 1 - x, y, ch)),
        GeometricOp::Rot270 => ImageU8::from_fn(w, h, c, |y, x, ch| img.get(x, w - 1 - y, ch)),
    }
}

/// `round(255 · (v/255)^gamma)` on every channel.
pub fn gamma_correct(img: &ImageU8, gamma: f64) -> Result<ImageU8> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::contract(format!("gamma {gamma} must be positive")));
    }
    let lut: Vec<u8> = (0..256).map(|v| (255.0 * (v as f64 / 255.0).powf(gamma)).round() as u8).collect();
    let pixels = img.pixels().iter().map(|&v| lut[v as usize]).collect();
    ImageU8::new(img.height(), img.width(), img.channels(), pixels)
}

/// Gamma that maps the mean intensity to mid-gray, clamped to `[0.25, 4]`.
pub fn adaptive_gamma(img: &ImageU8) -> f64 {
    let mean = img.pixels().iter().map(|&v| v as f64).sum::<f64>() / img.pixels().len() as f64 / 255.0;
    if mean <= 0.0 || mean >= 1.0 {
        return 1.0;
    }
    (0.5f64.ln() / mean.ln()).clamp(0.25, 4.0)
}

/// Adds `beta` to every value with saturation.
pub fn adjust_brightness(img: &ImageU8, beta: i32) -> ImageU8 {
    let pixels = img.pixels().iter().map(|&v| (v as i32 + beta).clamp(0, 255) as u8).collect();
    ImageU8::new(img.height(), img.width(), img.channels(), pixels).expect("same extents")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image() -> impl Strategy<Value = ImageU8> {
        (1usize..7, 1usize..7, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(h, w, c)| {
            proptest::collection::vec(any::<u8>(), h * w * c).prop_map(move |px| ImageU8::new(h, w, c, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn group_laws(img in image()) {
            use GeometricOp::*;
            let hh = geometric_augment(&geometric_augment(&img, HFlip), HFlip);
            prop_assert_eq!(&hh, &img);
            let mut r = img.clone();
            for _ in 0..4 {
                r = geometric_augment(&r, Rot90);
            }
            prop_assert_eq!(&r, &img);
            prop_assert_eq!(
                geometric_augment(&img, Rot180),
                geometric_augment(&geometric_augment(&img, HFlip), VFlip)
            );
            prop_assert_eq!(
                geometric_augment(&img, Rot270),
                geometric_augment(&geometric_augment(&img, Rot180), Rot90)
            );
        }

        #[test]
        fn augment_permutes_values(img in image(), k in 0usize..5) {
            let out = geometric_augment(&img, GeometricOp::ALL[k]);
            let mut a = img.pixels().to_vec();
            let mut b = out.pixels().to_vec();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn gamma_examples() {
        let img = ImageU8::new(1, 4, 1, vec![0, 64, 200, 255]).unwrap();
        assert_eq!(gamma_correct(&img, 1.0).unwrap(), img);
        for g in [0.3, 2.0, 3.7] {
            let out = gamma_correct(&img, g).unwrap();
            assert_eq!(out.pixels()[0], 0);
            assert_eq!(out.pixels()[3], 255);
        }
        assert_eq!(gamma_correct(&img, 2.0).unwrap().pixels()[1], 16);
        assert!(matches!(gamma_correct(&img, 0.0), Err(Error::Contract(_))));
        assert!(gamma_correct(&img, -1.0).is_err());
    }

    #[test]
    fn rot90_turns_clockwise() {
        let img = ImageU8::new(2, 3, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let r = geometric_augment(&img, GeometricOp::Rot90);
        assert_eq!((r.height(), r.width()), (3, 2));
        assert_eq!(r.pixels(), &[4, 1, 5, 2, 6, 3]);
    }
}
