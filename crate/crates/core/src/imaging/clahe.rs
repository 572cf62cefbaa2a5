//! Contrast-limited adaptive histogram equalization.
//!
//! The image is cut into `tile × tile` pixel tiles (edge tiles shrink when
//! the tile does not divide the image). Each tile gets a clipped-histogram
//! equalization lookup table; every output pixel blends the tables of the
//! (up to) four tiles whose centers surround it.

use super::ImageU8;
use crate::error::{Error, Result};

/// Equalization table for one tile.
///
/// Bins are clipped at `max(1, ⌊clip · n / 256⌋)`; the clipped excess is
/// spread evenly over all bins with any remainder dealt out at a regular
/// stride from bin 0. The table is `round(255 · cdf(v) / n)`, so it is
/// non-decreasing and `lut[255] = 255`.
pub fn tile_lut(tile: &[u8], clip: f64) -> [u8; 256] {
    let mut hist = [0u32; 256];
    for &v in tile {
        hist[v as usize] += 1;
    }
    let n = tile.len();
    let limit = ((clip * n as f64 / 256.0) as u32).max(1);
    let mut excess = 0u32;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let batch = excess / 256;
    let mut residual = excess % 256;
    for h in hist.iter_mut() {
        *h += batch;
    }
    if residual > 0 {
        let step = (256 / residual as usize).max(1);
        let mut i = 0;
        while i < 256 && residual > 0 {
            hist[i] += 1;
            residual -= 1;
            i += step;
        }
    }
    let scale = 255.0 / n as f64;
    let mut lut = [0u8; 256];
    let mut cdf = 0u32;
    for (v, slot) in lut.iter_mut().enumerate() {
        cdf += hist[v];
        *slot = (cdf as f64 * scale).round().min(255.0) as u8;
    }
    lut
}

/// Neighbouring tile indices and blend weight for a coordinate, given the
/// tile centers along that axis.
fn blend_axis(pos: f64, centers: &[f64]) -> (usize, usize, f64) {
    let last = centers.len() - 1;
    if pos <= centers[0] {
        return (0, 0, 0.0);
    }
    if pos >= centers[last] {
        return (last, last, 0.0);
    }
    let i = centers.iter().rposition(|&c| c <= pos).unwrap();
    (i, i + 1, (pos - centers[i]) / (centers[i + 1] - centers[i]))
}

fn tile_centers(extent: usize, tile: usize) -> Vec<f64> {
    (0..extent.div_ceil(tile))
        .map(|i| {
            let start = i * tile;
            let end = (start + tile).min(extent);
            (start + end - 1) as f64 / 2.0
        })
        .collect()
}

fn equalize_plane(plane: &[u8], h: usize, w: usize, tile: usize, clip: f64) -> Vec<u8> {
    let (ty, tx) = (h.div_ceil(tile), w.div_ceil(tile));
    let mut luts = Vec::with_capacity(ty * tx);
    let mut buf = Vec::with_capacity(tile * tile);
    for i in 0..ty {
        for j in 0..tx {
            buf.clear();
            for y in i * tile..((i + 1) * tile).min(h) {
                buf.extend_from_slice(&plane[y * w + j * tile..y * w + ((j + 1) * tile).min(w)]);
            }
            luts.push(tile_lut(&buf, clip));
        }
    }
    let cy = tile_centers(h, tile);
    let cx = tile_centers(w, tile);
    let xw: Vec<_> = (0..w).map(|x| blend_axis(x as f64, &cx)).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (i0, i1, fy) = blend_axis(y as f64, &cy);
        for (x, &(j0, j1, fx)) in xw.iter().enumerate() {
            let v = plane[y * w + x] as usize;
            let l = |i: usize, j: usize| luts[i * tx + j][v] as f64;
            let top = l(i0, j0) * (1.0 - fx) + l(i0, j1) * fx;
            let bottom = l(i1, j0) * (1.0 - fx) + l(i1, j1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy).round() as u8);
        }
    }
    out
}

/// Luma with ITU-R BT.601 weights.
pub(crate) fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round().min(255.0) as u8
}

/// CLAHE on grayscale images, or on the luma of color images with every
/// channel rescaled by `Y'/Y` so channel ratios are kept.
pub fn adaptive_hist_eq(img: &ImageU8, tile: usize, clip: f64) -> Result<ImageU8> {
    if tile < 1 {
        return Err(Error::contract("CLAHE tile must be at least 1"));
    }
    if !(clip > 0.0) {
        return Err(Error::contract(format!("CLAHE clip {clip} must be positive")));
    }
    let (h, w) = (img.height(), img.width());
    if img.channels() == 1 {
        let out = equalize_plane(img.pixels(), h, w, tile, clip);
        return ImageU8::new(h, w, 1, out);
    }
    let y: Vec<u8> = img.pixels().chunks(3).map(|p| luma(p[0], p[1], p[2])).collect();
    let eq = equalize_plane(&y, h, w, tile, clip);
    let mut pixels = Vec::with_capacity(img.pixels().len());
    for ((p, &before), &after) in img.pixels().chunks(3).zip(&y).zip(&eq) {
        if before == 0 {
            pixels.extend_from_slice(&[after; 3]);
        } else {
            let gain = after as f64 / before as f64;
            pixels.extend(p.iter().map(|&c| (c as f64 * gain).round().min(255.0) as u8));
        }
    }
    ImageU8::new(h, w, 3, pixels)
}
