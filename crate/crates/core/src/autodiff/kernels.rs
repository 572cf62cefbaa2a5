//! Raw loops shared by the primitive forward and backward rules.
//! Reductions accumulate in `f64`.

/// `c[m×n] = a[m×k] · b[k×n]`
pub(crate) fn matmul_forward(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; m * n];
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let row = &b[p * n..(p + 1) * n];
            for (slot, &bv) in acc.iter_mut().zip(row) {
                *slot += aip * bv;
            }
        }
        for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
            *o = v;
        }
    }
    out
}

/// `da[m×k] = dc[m×n] · bᵀ`
pub(crate) fn matmul_grad_a(dc: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; m * k];
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: f64 = drow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            out[i * k + p] = dot;
        }
    }
    out
}

/// `db[k×n] = aᵀ · dc[m×n]`
pub(crate) fn matmul_grad_b(a: &[f64], dc: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; k * n];
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let slot = &mut acc[p * n..(p + 1) * n];
            for (s, &d) in slot.iter_mut().zip(drow) {
                *s += aip * d;
            }
        }
    }
    acc
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Input row/column read by output position `o` at kernel tap `t`.
    #[inline]
    fn source(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Cross-correlation with zero padding.
pub(crate) fn conv2d_forward(x: &[f64], w: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let mut out = vec![0.0f64; g.kernels * g.out_h * g.out_w];
    let plane = g.height * g.width;
    for k in 0..g.kernels {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut acc = 0.0f64;
                for c in 0..g.channels {
                    let wbase = (k * g.channels + c) * g.kh * g.kw;
                    for ky in 0..g.kh {
                        let Some(iy) = g.source(oy, ky, g.height) else { continue };
                        let xrow = c * plane + iy * g.width;
                        for kx in 0..g.kw {
                            let Some(ix) = g.source(ox, kx, g.width) else { continue };
                            acc += x[xrow + ix] * w[wbase + ky * g.kw + kx];
                        }
                    }
                }
                out[(k * g.out_h + oy) * g.out_w + ox] = acc;
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input and kernels.
pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    g: &ConvGeometry,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let plane = g.height * g.width;
    let mut dx = need_dx.then(|| vec![0.0f64; g.channels * plane]);
    let mut dw = need_dw.then(|| vec![0.0f64; w.len()]);
    for k in 0..g.kernels {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let d = dy[(k * g.out_h + oy) * g.out_w + ox];
                if d == 0.0 {
                    continue;
                }
                for c in 0..g.channels {
                    let wbase = (k * g.channels + c) * g.kh * g.kw;
                    for ky in 0..g.kh {
                        let Some(iy) = g.source(oy, ky, g.height) else { continue };
                        let xrow = c * plane + iy * g.width;
                        for kx in 0..g.kw {
                            let Some(ix) = g.source(ox, kx, g.width) else { continue };
                            let widx = wbase + ky * g.kw + kx;
                            if let Some(dx) = dx.as_mut() {
                                dx[xrow + ix] += d * w[widx];
                            }
                            if let Some(dw) = dw.as_mut() {
                                dw[widx] += d * x[xrow + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}

/// Source taps for half-pixel-center bilinear resampling from `in_len`
/// samples to `out_len` samples: `(lower, upper, upper_weight)`.
pub fn bilinear_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Splits a shape around `axis` into `(outer, extent, inner)`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
