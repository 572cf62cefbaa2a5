use super::ImageU8;
use crate::autodiff::bilinear_taps;
use crate::error::{Error, Result};

/// Bilinear resampling with half-pixel centers; results are rounded.
pub fn resize_bilinear(img: &ImageU8, target: (usize, usize)) -> Result<ImageU8> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::dim(format!("resize target {th}×{tw}")));
    }
    let ty = bilinear_taps(th, img.height());
    let tx = bilinear_taps(tw, img.width());
    Ok(ImageU8::from_fn(th, tw, img.channels(), |y, x, c| {
        let (y0, y1, fy) = ty[y];
        let (x0, x1, fx) = tx[x];
        let p = |yy, xx| img.get(yy, xx, c) as f64;
        let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
        let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
        (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
    }))
}

/// Nearest-neighbour resampling with half-pixel centers, for label masks.
pub fn resize_nearest(img: &ImageU8, target: (usize, usize)) -> Result<ImageU8> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::dim(format!("resize target {th}×{tw}")));
    }
    let src = |o: usize, out: usize, inp: usize| (((o as f64 + 0.5) * inp as f64 / out as f64) as usize).min(inp - 1);
    Ok(ImageU8::from_fn(th, tw, img.channels(), |y, x, c| img.get(src(y, th, img.height()), src(x, tw, img.width()), c)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let img = ImageU8::from_fn(5, 7, 3, |y, x, c| (y * 31 + x * 7 + c * 50) as u8);
        assert_eq!(resize_bilinear(&img, (5, 7)).unwrap(), img);
        assert_eq!(resize_nearest(&img, (5, 7)).unwrap(), img);
    }

    #[test]
    fn constant_stays_constant() {
        let img = ImageU8::filled(4, 6, 1, 93).unwrap();
        let out = resize_bilinear(&img, (11, 3)).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 93));
    }

    #[test]
    fn checkerboard_to_single_pixel_is_rounded_mean() {
        let img = ImageU8::new(2, 2, 1, vec![0, 255, 255, 0]).unwrap();
        // the single output sample sits at source (0.5, 0.5): (0+255+255+0)/4 = 127.5 → 128
        assert_eq!(resize_bilinear(&img, (1, 1)).unwrap().pixels(), &[128]);
    }

    #[test]
    fn zero_extent_rejected() {
        let img = ImageU8::filled(2, 2, 1, 0).unwrap();
        assert!(matches!(resize_bilinear(&img, (0, 3)), Err(Error::Dimension(_))));
    }
}
