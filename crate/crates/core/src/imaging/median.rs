use super::ImageU8;
use crate::error::{Error, Result};

/// Per-channel median over a `window × window` neighbourhood, replicating
/// border pixels.
pub fn median_filter(img: &ImageU8, window: usize) -> Result<ImageU8> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::contract(format!("median window {window} must be odd")));
    }
    let r = (window / 2) as isize;
    let (h, w) = (img.height() as isize, img.width() as isize);
    let mut buf = Vec::with_capacity(window * window);
    Ok(ImageU8::from_fn(img.height(), img.width(), img.channels(), |y, x, c| {
        buf.clear();
        for dy in -r..=r {
            let yy = (y as isize + dy).clamp(0, h - 1) as usize;
            for dx in -r..=r {
                let xx = (x as isize + dx).clamp(0, w - 1) as usize;
                buf.push(img.get(yy, xx, c));
            }
        }
        let mid = buf.len() / 2;
        *buf.select_nth_unstable(mid).1
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_unchanged() {
        let img = ImageU8::filled(6, 5, 3, 41).unwrap();
        assert_eq!(median_filter(&img, 3).unwrap(), img);
    }

    #[test]
    fn impulse_rejected() {
        let mut img = ImageU8::filled(5, 5, 1, 0).unwrap();
        img.set(2, 2, 0, 255);
        assert!(median_filter(&img, 3).unwrap().pixels().iter().all(|&v| v == 0));
    }

    #[test]
    fn even_window_is_contract_error() {
        let img = ImageU8::filled(3, 3, 1, 0).unwrap();
        assert!(matches!(median_filter(&img, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn window_one_is_identity() {
        let img = ImageU8::from_fn(4, 4, 1, |y, x, _| (y * 17 + x * 3) as u8);
        assert_eq!(median_filter(&img, 1).unwrap(), img);
    }
}
