//! Primitive operations: forward constructors on [`Var`] and the matching
//! backward rules.

use super::kernels::{
    bilinear_taps, conv2d_backward, conv2d_forward, matmul_forward, matmul_grad_a, matmul_grad_b, split_axis, ConvGeometry,
};
use super::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Transpose { a: usize },
    Conv2d { x: usize, w: usize, geom: ConvGeometry },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    AddScalar { a: usize },
    Relu { a: usize },
    LeakyRelu { a: usize, slope: f64 },
    Sigmoid { a: usize },
    Tanh { a: usize },
    Softplus { a: usize },
    Ln { a: usize, floor: f64 },
    Softmax { a: usize, axis: usize },
    LogSoftmax { a: usize, axis: usize },
    Sum { a: usize },
    Mean { a: usize },
    Gap { a: usize },
    MeanRows { a: usize },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { a: usize, axis: usize, start: usize },
    Reshape { a: usize },
    Broadcast { a: usize, v: usize, axis: usize, mul: bool },
    AvgPool2 { a: usize },
    Upsample2 { a: usize },
    ResizeBilinear { a: usize },
    Patchify { a: usize, patch: usize },
    LayerNorm { a: usize, eps: f64 },
    L2Normalize { a: usize, eps: f64 },
    Pick { a: usize, indices: Vec<usize> },
    SoftDice { a: usize, truth: Tensor, smooth: f64 },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Transpose { .. } => "transpose",
            Op::Conv2d { .. } => "conv2d",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Div { .. } => "div",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Relu { .. } => "relu",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Tanh { .. } => "tanh",
            Op::Softplus { .. } => "softplus",
            Op::Ln { .. } => "ln",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Gap { .. } => "gap",
            Op::MeanRows { .. } => "mean_rows",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape { .. } => "reshape",
            Op::Broadcast { .. } => "broadcast",
            Op::AvgPool2 { .. } => "avg_pool2",
            Op::Upsample2 { .. } => "upsample2",
            Op::ResizeBilinear { .. } => "resize_bilinear",
            Op::Patchify { .. } => "patchify",
            Op::LayerNorm { .. } => "layer_norm",
            Op::SoftDice { .. } => "soft_dice",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::Pick { .. } => "pick",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } | Op::Div { a, b } => vec![*a, *b],
            Op::Conv2d { x, w, .. } => vec![*x, *w],
            Op::Broadcast { a, v, .. } => vec![*a, *v],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Transpose { a }
            | Op::Scale { a, .. }
            | Op::AddScalar { a }
            | Op::Relu { a }
            | Op::LeakyRelu { a, .. }
            | Op::Sigmoid { a }
            | Op::Tanh { a }
            | Op::Softplus { a }
            | Op::Ln { a, .. }
            | Op::Softmax { a, .. }
            | Op::LogSoftmax { a, .. }
            | Op::Sum { a }
            | Op::Mean { a }
            | Op::Gap { a }
            | Op::MeanRows { a }
            | Op::Slice { a, .. }
            | Op::Reshape { a }
            | Op::AvgPool2 { a }
            | Op::Upsample2 { a }
            | Op::ResizeBilinear { a }
            | Op::Patchify { a, .. }
            | Op::LayerNorm { a, .. }
            | Op::L2Normalize { a, .. }
            | Op::Pick { a, .. }
            | Op::SoftDice { a, .. } => vec![*a],
        }
    }

    /// Vector-Jacobian products for every input that needs a gradient.
    pub(crate) fn backward<'n>(
        &self,
        g: &[f64],
        out: &Tensor,
        value: impl Fn(usize) -> &'n Tensor,
        needs: impl Fn(usize) -> bool,
    ) -> Vec<(usize, Vec<f64>)> {
        let mut grads = Vec::new();
        let mut emit = |id: usize, f: &mut dyn FnMut() -> Vec<f64>| {
            if needs(id) {
                grads.push((id, f()));
            }
        };
        let map =
            |a: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.data().iter().zip(g).map(|(&x, &d)| f(x, d)).collect() };
        match self {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (at, bt) = (value(*a), value(*b));
                let (m, k, n) = (at.shape()[0], at.shape()[1], bt.shape()[1]);
                emit(*a, &mut || matmul_grad_a(g, bt.data(), m, k, n));
                emit(*b, &mut || matmul_grad_b(at.data(), g, m, k, n));
            }
            Op::Transpose { a } => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                emit(*a, &mut || {
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            d[j * r + i] = g[i * c + j];
                        }
                    }
                    d
                });
            }
            Op::Conv2d { x, w, geom } => {
                let (mut dx, mut dw) = conv2d_backward(value(*x).data(), value(*w).data(), g, geom, needs(*x), needs(*w));
                emit(*x, &mut || dx.take().unwrap_or_default());
                emit(*w, &mut || dw.take().unwrap_or_default());
            }
            Op::Add { a, b } => {
                emit(*a, &mut || g.to_vec());
                emit(*b, &mut || g.to_vec());
            }
            Op::Sub { a, b } => {
                emit(*a, &mut || g.to_vec());
                emit(*b, &mut || g.iter().map(|d| -d).collect());
            }
            Op::Mul { a, b } => {
                let (at, bt) = (value(*a), value(*b));
                emit(*a, &mut || map(bt, &|y, d| y * d));
                emit(*b, &mut || map(at, &|x, d| x * d));
            }
            Op::Div { a, b } => {
                let (at, bt) = (value(*a), value(*b));
                emit(*a, &mut || map(bt, &|y, d| d / y));
                emit(*b, &mut || at.data().iter().zip(bt.data()).zip(g).map(|((&x, &y), &d)| -d * x / (y * y)).collect());
            }
            Op::Scale { a, factor } => emit(*a, &mut || g.iter().map(|d| d * factor).collect()),
            Op::AddScalar { a } | Op::Reshape { a } => emit(*a, &mut || g.to_vec()),
            Op::Relu { a } => emit(*a, &mut || map(value(*a), &|x, d| if x > 0.0 { d } else { 0.0 })),
            Op::LeakyRelu { a, slope } => emit(*a, &mut || map(value(*a), &|x, d| if x > 0.0 { d } else { d * slope })),
            Op::Sigmoid { a } => emit(*a, &mut || map(out, &|y, d| d * y * (1.0 - y))),
            Op::Tanh { a } => emit(*a, &mut || map(out, &|y, d| d * (1.0 - y * y))),
            Op::Softplus { a } => emit(*a, &mut || map(value(*a), &|x, d| d * sigmoid(x))),
            Op::Ln { a, floor } => emit(*a, &mut || map(value(*a), &|x, d| if x > *floor { d / x } else { 0.0 })),
            Op::Softmax { a, axis } => emit(*a, &mut || {
                let mut dx = vec![0.0; g.len()];
                for_each_lane(out.shape(), *axis, |lane| {
                    let s: f64 = lane.clone().map(|i| g[i] * out.data()[i]).sum();
                    for i in lane {
                        dx[i] = out.data()[i] * (g[i] - s);
                    }
                });
                dx
            }),
            Op::LogSoftmax { a, axis } => emit(*a, &mut || {
                let mut dx = vec![0.0; g.len()];
                for_each_lane(out.shape(), *axis, |lane| {
                    let s: f64 = lane.clone().map(|i| g[i]).sum();
                    for i in lane {
                        dx[i] = g[i] - out.data()[i].exp() * s;
                    }
                });
                dx
            }),
            Op::Sum { a } => emit(*a, &mut || vec![g[0]; value(*a).numel()]),
            Op::Mean { a } => {
                let n = value(*a).numel();
                emit(*a, &mut || vec![g[0] / n as f64; n]);
            }
            Op::Gap { a } => {
                let shape = value(*a).shape();
                let plane = shape[1] * shape[2];
                emit(*a, &mut || (0..shape[0] * plane).map(|i| g[i / plane] / plane as f64).collect());
            }
            Op::MeanRows { a } => {
                let shape = value(*a).shape();
                let (rows, cols) = (shape[0], shape[1]);
                emit(*a, &mut || (0..rows * cols).map(|i| g[i % cols] / rows as f64).collect());
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let extent = value(p).shape()[*axis];
                    emit(p, &mut || {
                        let mut d = Vec::with_capacity(outer * extent * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g[base..base + extent * inner]);
                        }
                        d
                    });
                    offset += extent;
                }
            }
            Op::Slice { a, axis, start } => {
                let src = value(*a).shape();
                let (outer, total, inner) = split_axis(src, *axis);
                let len = out.shape()[*axis];
                emit(*a, &mut || {
                    let mut d = vec![0.0; outer * total * inner];
                    for o in 0..outer {
                        let dst = (o * total + start) * inner;
                        let from = o * len * inner;
                        d[dst..dst + len * inner].copy_from_slice(&g[from..from + len * inner]);
                    }
                    d
                });
            }
            Op::Broadcast { a, v, axis, mul } => {
                let (at, vt) = (value(*a), value(*v));
                let (outer, n, inner) = split_axis(at.shape(), *axis);
                let vidx = |i: usize| (i / inner) % n;
                let _ = outer;
                if *mul {
                    emit(*a, &mut || g.iter().enumerate().map(|(i, d)| d * vt.data()[vidx(i)]).collect());
                } else {
                    emit(*a, &mut || g.to_vec());
                }
                emit(*v, &mut || {
                    let mut acc = vec![0.0f64; n];
                    for (i, &d) in g.iter().enumerate() {
                        let scale = if *mul { at.data()[i] } else { 1.0 };
                        acc[vidx(i)] += d * scale;
                    }
                    acc
                });
            }
            Op::AvgPool2 { a } => {
                let s = value(*a).shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h / 2, w / 2);
                emit(*a, &mut || {
                    let mut d = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for y in 0..h {
                            for x in 0..w {
                                d[(ch * h + y) * w + x] = g[(ch * oh + y / 2) * ow + x / 2] * 0.25;
                            }
                        }
                    }
                    d
                });
            }
            Op::Upsample2 { a } => {
                let s = value(*a).shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                emit(*a, &mut || {
                    let mut d = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for y in 0..2 * h {
                            for x in 0..2 * w {
                                d[(ch * h + y / 2) * w + x / 2] += g[(ch * 2 * h + y) * 2 * w + x];
                            }
                        }
                    }
                    d
                });
            }
            Op::ResizeBilinear { a } => {
                let s = value(*a).shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (out.shape()[1], out.shape()[2]);
                emit(*a, &mut || {
                    let ty = bilinear_taps(oh, h);
                    let tx = bilinear_taps(ow, w);
                    let mut d = vec![0.0f64; c * h * w];
                    for ch in 0..c {
                        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                                let gv = g[(ch * oh + oy) * ow + ox];
                                let base = ch * h * w;
                                d[base + y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                                d[base + y0 * w + x1] += gv * (1.0 - fy) * fx;
                                d[base + y1 * w + x0] += gv * fy * (1.0 - fx);
                                d[base + y1 * w + x1] += gv * fy * fx;
                            }
                        }
                    }
                    d
                });
            }
            Op::Patchify { a, patch } => {
                let s = value(*a).shape().to_vec();
                emit(*a, &mut || {
                    let mut d = vec![0.0; g.len()];
                    for (dst, src) in patch_index_map(&s, *patch).into_iter().enumerate() {
                        d[src] = g[dst];
                    }
                    d
                });
            }
            Op::SoftDice { a, truth, smooth } => {
                let p = value(*a);
                emit(*a, &mut || {
                    let stats = dice_stats(p.data(), truth.data(), p.shape()[0], *smooth);
                    let k = stats.len();
                    let n = p.numel() / k;
                    let mut d = vec![0.0; p.numel()];
                    for (c, &(num, den)) in stats.iter().enumerate() {
                        let span = c * n..(c + 1) * n;
                        for (di, &t) in d[span.clone()].iter_mut().zip(&truth.data()[span]) {
                            *di = -(2.0 * t * den - num) / (den * den) / k as f64 * g[0];
                        }
                    }
                    d
                });
            }
            Op::LayerNorm { a, eps } => {
                let x = value(*a);
                emit(*a, &mut || {
                    let n = *x.shape().last().unwrap();
                    let mut dx = vec![0.0; g.len()];
                    for r in 0..x.numel() / n {
                        let span = r * n..(r + 1) * n;
                        let (_, std) = mean_std(&x.data()[span.clone()], *eps);
                        let y = &out.data()[span.clone()];
                        let gr = &g[span.clone()];
                        let mg: f64 = gr.iter().copied().sum::<f64>() / n as f64;
                        let mgy: f64 = gr.iter().zip(y).map(|(&d, &v)| d * v).sum::<f64>() / n as f64;
                        for (j, i) in span.enumerate() {
                            dx[i] = (gr[j] - mg - y[j] * mgy) / std;
                        }
                    }
                    dx
                });
            }
            Op::L2Normalize { a, eps } => {
                let x = value(*a);
                emit(*a, &mut || {
                    let n = *x.shape().last().unwrap();
                    let mut dx = vec![0.0; g.len()];
                    for r in 0..x.numel() / n {
                        let span = r * n..(r + 1) * n;
                        let norm = l2_norm(&x.data()[span.clone()]);
                        let y = &out.data()[span.clone()];
                        let gr = &g[span.clone()];
                        if norm < *eps {
                            for (j, i) in span.enumerate() {
                                dx[i] = gr[j] / eps;
                            }
                        } else {
                            let dot: f64 = gr.iter().zip(y).map(|(&d, &v)| d * v).sum();
                            for (j, i) in span.enumerate() {
                                dx[i] = (gr[j] - y[j] * dot) / norm;
                            }
                        }
                    }
                    dx
                });
            }
            Op::Pick { a, indices } => {
                let n = value(*a).numel();
                emit(*a, &mut || {
                    let mut d = vec![0.0; n];
                    for (&i, &gv) in indices.iter().zip(g) {
                        d[i] += gv;
                    }
                    d
                });
            }
        }
        grads
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

/// Mean and `sqrt(var + eps)` of a slice.
fn mean_std(v: &[f64], eps: f64) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().copied().sum::<f64>() / n;
    let var = v.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, (var + eps).sqrt())
}

/// Calls `f` with the flat indices of every 1-D lane along `axis`.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(std::iter::StepBy<std::ops::Range<usize>>)) {
    let (outer, n, inner) = split_axis(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let start = o * n * inner + i;
            f((start..start + n * inner).step_by(inner));
        }
    }
}

/// For each output element of patchify, the flat input index it copies.
/// Patches are ordered row-major over the grid; within a patch values are
/// ordered channel, row, column.
fn patch_index_map(shape: &[usize], p: usize) -> Vec<usize> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (gh, gw) = (h / p, w / p);
    let mut map = Vec::with_capacity(c * h * w);
    for py in 0..gh {
        for px in 0..gw {
            for ch in 0..c {
                for dy in 0..p {
                    for dx in 0..p {
                        map.push((ch * h + py * p + dy) * w + px * p + dx);
                    }
                }
            }
        }
    }
    map
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("{op}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_axis(op: &str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::dim(format!("{op}: axis {axis} out of range for shape {shape:?}")));
    }
    Ok(())
}

fn check_rank(op: &str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::dim(format!("{op}: expected rank {rank}, got shape {:?}", t.shape())));
    }
    Ok(())
}

// Fallible elementwise arithmetic; operator traits cannot return `Result`.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
        };
        self.tape.push(out, op)
    }

    fn binary(self, other: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let out = {
            let (a, b) = (self.value(), other.value());
            same_shape(op.name(), &a, &b)?;
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        };
        self.tape.push(out, op)
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(self, b: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let (x, y) = (self.value(), b.value());
            check_rank("matmul", &x, 2)?;
            check_rank("matmul", &y, 2)?;
            let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
            if y.shape()[0] != k {
                return Err(Error::dim(format!("matmul: inner extents differ ({:?} · {:?})", x.shape(), y.shape())));
            }
            Tensor::from_parts(vec![m, n], matmul_forward(x.data(), y.data(), m, k, n))
        };
        self.tape.push(out, Op::MatMul { a: self.id, b: b.id })
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            check_rank("transpose", &x, 2)?;
            let (r, c) = (x.shape()[0], x.shape()[1]);
            let mut d = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    d[j * r + i] = x.data()[i * c + j];
                }
            }
            Tensor::from_parts(vec![c, r], d)
        };
        self.tape.push(out, Op::Transpose { a: self.id })
    }

    /// Cross-correlation of a `[C×H×W]` input with `[K×C×kh×kw]` kernels.
    pub fn conv2d(self, kernels: Var<'t>, stride: usize, padding: usize) -> Result<Var<'t>> {
        let (out, geom) = {
            let (x, w) = (self.value(), kernels.value());
            check_rank("conv2d", &x, 3)?;
            check_rank("conv2d", &w, 4)?;
            if stride == 0 {
                return Err(Error::contract("conv2d: stride must be positive"));
            }
            let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (k, kc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
            if kc != c {
                return Err(Error::dim(format!("conv2d: input has {c} channels, kernels expect {kc}")));
            }
            if kh > h + 2 * padding || kw > wd + 2 * padding {
                return Err(Error::dim(format!(
                    "conv2d: kernel {kh}×{kw} larger than padded input {}×{}",
                    h + 2 * padding,
                    wd + 2 * padding
                )));
            }
            let geom = ConvGeometry {
                channels: c,
                height: h,
                width: wd,
                kernels: k,
                kh,
                kw,
                stride,
                pad: padding,
                out_h: (h + 2 * padding - kh) / stride + 1,
                out_w: (wd + 2 * padding - kw) / stride + 1,
            };
            let data = conv2d_forward(x.data(), w.data(), &geom);
            (Tensor::from_parts(vec![k, geom.out_h, geom.out_w], data), geom)
        };
        self.tape.push(out, Op::Conv2d { x: self.id, w: kernels.id, geom })
    }

    pub fn add(self, b: Var<'t>) -> Result<Var<'t>> {
        self.binary(b, Op::Add { a: self.id, b: b.id }, |x, y| x + y)
    }

    pub fn sub(self, b: Var<'t>) -> Result<Var<'t>> {
        self.binary(b, Op::Sub { a: self.id, b: b.id }, |x, y| x - y)
    }

    pub fn mul(self, b: Var<'t>) -> Result<Var<'t>> {
        self.binary(b, Op::Mul { a: self.id, b: b.id }, |x, y| x * y)
    }

    pub fn div(self, b: Var<'t>) -> Result<Var<'t>> {
        self.binary(b, Op::Div { a: self.id, b: b.id }, |x, y| x / y)
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale { a: self.id, factor }, |x| x * factor)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::AddScalar { a: self.id }, |x| x + c)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(Op::Relu { a: self.id }, |x| x.max(0.0))
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t>> {
        self.unary(Op::LeakyRelu { a: self.id, slope }, |x| if x > 0.0 { x } else { x * slope })
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(Op::Sigmoid { a: self.id }, sigmoid)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary(Op::Tanh { a: self.id }, f64::tanh)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Result<Var<'t>> {
        self.unary(Op::Softplus { a: self.id }, softplus)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn ln_floored(self, floor: f64) -> Result<Var<'t>> {
        if floor <= 0.0 {
            return Err(Error::contract("ln floor must be positive"));
        }
        self.unary(Op::Ln { a: self.id, floor }, |x| x.max(floor).ln())
    }

    fn lane_op(self, axis: usize, log: bool) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            let name = if log { "log_softmax" } else { "softmax" };
            check_axis(name, x.shape(), axis)?;
            let mut d = vec![0.0; x.numel()];
            for_each_lane(x.shape(), axis, |lane| {
                let max = lane.clone().fold(f64::NEG_INFINITY, |m, i| m.max(x.data()[i]));
                let sum: f64 = lane.clone().map(|i| (x.data()[i] - max).exp()).sum();
                for i in lane {
                    let shifted = x.data()[i] - max;
                    d[i] = if log { shifted - sum.ln() } else { shifted.exp() / sum };
                }
            });
            Tensor::from_parts(x.shape().to_vec(), d)
        };
        let op = if log { Op::LogSoftmax { a: self.id, axis } } else { Op::Softmax { a: self.id, axis } };
        self.tape.push(out, op)
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        self.lane_op(axis, false)
    }

    pub fn log_softmax(self, axis: usize) -> Result<Var<'t>> {
        self.lane_op(axis, true)
    }

    /// Sum of all elements as a scalar.
    pub fn sum(self) -> Result<Var<'t>> {
        let s: f64 = self.value().data().iter().copied().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum { a: self.id })
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let s = {
            let x = self.value();
            x.data().iter().copied().sum::<f64>() / x.numel() as f64
        };
        self.tape.push(Tensor::scalar(s), Op::Mean { a: self.id })
    }

    /// Global average pooling `[C×H×W] → [C]`.
    pub fn gap(self) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            check_rank("gap", &x, 3)?;
            let plane = x.shape()[1] * x.shape()[2];
            let d = x.data().chunks(plane).map(|ch| ch.iter().copied().sum::<f64>() / plane as f64).collect();
            Tensor::from_parts(vec![x.shape()[0]], d)
        };
        self.tape.push(out, Op::Gap { a: self.id })
    }

    /// Column means `[N×d] → [d]`.
    pub fn mean_rows(self) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            check_rank("mean_rows", &x, 2)?;
            let (rows, cols) = (x.shape()[0], x.shape()[1]);
            let mut acc = vec![0.0f64; cols];
            for row in x.data().chunks(cols) {
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            Tensor::from_parts(vec![cols], acc.into_iter().map(|v| v / rows as f64).collect())
        };
        self.tape.push(out, Op::MeanRows { a: self.id })
    }

    /// Contiguous sub-range `start..start+len` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            check_axis("slice", x.shape(), axis)?;
            let (outer, total, inner) = split_axis(x.shape(), axis);
            if len == 0 || start + len > total {
                return Err(Error::dim(format!("slice: range {start}..{} outside extent {total}", start + len)));
            }
            let mut d = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * total + start) * inner;
                d.extend_from_slice(&x.data()[base..base + len * inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[axis] = len;
            Tensor::from_parts(shape, d)
        };
        self.tape.push(out, Op::Slice { a: self.id, axis, start })
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let out = self.value().reshape(shape)?;
        self.tape.push(out, Op::Reshape { a: self.id })
    }

    fn broadcast(self, v: Var<'t>, axis: usize, mul: bool) -> Result<Var<'t>> {
        let out = {
            let (x, vv) = (self.value(), v.value());
            check_axis("broadcast", x.shape(), axis)?;
            let (_, n, inner) = split_axis(x.shape(), axis);
            if vv.rank() != 1 || vv.numel() != n {
                return Err(Error::dim(format!(
                    "broadcast: vector of shape {:?} does not match extent {n} of {:?}",
                    vv.shape(),
                    x.shape()
                )));
            }
            let d = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, &val)| {
                    let b = vv.data()[(i / inner) % n];
                    if mul {
                        val * b
                    } else {
                        val + b
                    }
                })
                .collect();
            Tensor::from_parts(x.shape().to_vec(), d)
        };
        self.tape.push(out, Op::Broadcast { a: self.id, v: v.id, axis, mul })
    }

    /// Adds a vector along `axis`, repeating it over every other axis.
    pub fn broadcast_add(self, v: Var<'t>, axis: usize) -> Result<Var<'t>> {
        self.broadcast(v, axis, false)
    }

    /// Multiplies by a vector along `axis`, repeating it over every other axis.
    pub fn broadcast_mul(self, v: Var<'t>, axis: usize) -> Result<Var<'t>> {
        self.broadcast(v, axis, true)
    }

    /// 2×2 average pooling with stride 2 on `[C×H×W]`.
    pub fn avg_pool2(self) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            check_rank("avg_pool2", &x, 3)?;
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::dim(format!("avg_pool2: odd spatial extent {h}×{w}")));
            }
            let (oh, ow) = (h / 2, w / 2);
            let mut d = vec![0.0; c * oh * ow];
            for ch in 0..c {
                for y in 0..oh {
                    for xx in 0..ow {
                        let at = |dy: usize, dx: usize| x.data()[(ch * h + 2 * y + dy) * w + 2 * xx + dx];
                        let s = at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1);
                        d[(ch * oh + y) * ow + xx] = s * 0.25;
                    }
                }
            }
            Tensor::from_parts(vec![c, oh, ow], d)
        };
        self.tape.push(out, Op::AvgPool2 { a: self.id })
    }

    /// Nearest-neighbour 2× upsampling of `[C×H×W]`.
    pub fn upsample2(self) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            check_rank("upsample2", &x, 3)?;
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let mut d = Vec::with_capacity(c * 4 * h * w);
            for ch in 0..c {
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        d.push(x.data()[(ch * h + y / 2) * w + xx / 2]);
                    }
                }
            }
            Tensor::from_parts(vec![c, 2 * h, 2 * w], d)
        };
        self.tape.push(out, Op::Upsample2 { a: self.id })
    }

    /// Half-pixel-center bilinear resampling of `[C×H×W]` to `[C×height×width]`.
    pub fn resize_bilinear(self, height: usize, width: usize) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            check_rank("resize_bilinear", &x, 3)?;
            if height == 0 || width == 0 {
                return Err(Error::dim("resize_bilinear: zero target extent"));
            }
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let ty = bilinear_taps(height, h);
            let tx = bilinear_taps(width, w);
            let mut d = Vec::with_capacity(c * height * width);
            for ch in 0..c {
                let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
                for &(y0, y1, fy) in &ty {
                    for &(x0, x1, fx) in &tx {
                        let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                        let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                        d.push(top * (1.0 - fy) + bot * fy);
                    }
                }
            }
            Tensor::from_parts(vec![c, height, width], d)
        };
        self.tape.push(out, Op::ResizeBilinear { a: self.id })
    }

    /// Splits `[C×H×W]` into non-overlapping `patch×patch` tiles, one
    /// flattened tile per row: `[(H/p)(W/p) × C·p·p]`.
    pub fn patchify(self, patch: usize) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            check_rank("patchify", &x, 3)?;
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            if patch == 0 || h % patch != 0 || w % patch != 0 {
                return Err(Error::contract(format!("patchify: patch {patch} does not tile a {h}×{w} image")));
            }
            let d = patch_index_map(x.shape(), patch).into_iter().map(|i| x.data()[i]).collect();
            Tensor::from_parts(vec![(h / patch) * (w / patch), c * patch * patch], d)
        };
        self.tape.push(out, Op::Patchify { a: self.id, patch })
    }

    /// Standardizes each lane of the last axis: `(x − μ)/sqrt(σ² + eps)`.
    pub fn layer_norm(self, eps: f64) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            if x.rank() == 0 {
                return Err(Error::dim("layer_norm: scalar input"));
            }
            let n = *x.shape().last().unwrap();
            let mut d = Vec::with_capacity(x.numel());
            for row in x.data().chunks(n) {
                let (mean, std) = mean_std(row, eps);
                d.extend(row.iter().map(|&v| (v - mean) / std));
            }
            Tensor::from_parts(x.shape().to_vec(), d)
        };
        self.tape.push(out, Op::LayerNorm { a: self.id, eps })
    }

    /// Scales each lane of the last axis to unit Euclidean norm; lanes
    /// shorter than `eps` are divided by `eps` instead.
    pub fn l2_normalize(self, eps: f64) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            if x.rank() == 0 {
                return Err(Error::dim("l2_normalize: scalar input"));
            }
            let n = *x.shape().last().unwrap();
            let mut d = Vec::with_capacity(x.numel());
            for row in x.data().chunks(n) {
                let norm = l2_norm(row).max(eps);
                d.extend(row.iter().map(|&v| v / norm));
            }
            Tensor::from_parts(x.shape().to_vec(), d)
        };
        self.tape.push(out, Op::L2Normalize { a: self.id, eps })
    }

    /// Gathers elements by flat row-major index into a vector.
    pub fn pick(self, indices: &[usize]) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            if indices.is_empty() {
                return Err(Error::contract("pick: no indices"));
            }
            if let Some(&bad) = indices.iter().find(|&&i| i >= x.numel()) {
                return Err(Error::dim(format!("pick: index {bad} outside {} elements", x.numel())));
            }
            Tensor::from_parts(vec![indices.len()], indices.iter().map(|&i| x.data()[i]).collect())
        };
        self.tape.push(out, Op::Pick { a: self.id, indices: indices.to_vec() })
    }

    /// Soft Dice loss `1 − mean_k (2·Σ p·t + s)/(Σ p + Σ t + s)` over the
    /// leading axis, with `truth` held constant.
    pub fn soft_dice(self, truth: &Tensor, smooth: f64) -> Result<Var<'t>> {
        let out = {
            let p = self.value();
            if p.shape() != truth.shape() || p.rank() == 0 {
                return Err(Error::dim(format!("soft_dice: prediction {:?} and truth {:?} differ", p.shape(), truth.shape())));
            }
            let stats = dice_stats(p.data(), truth.data(), p.shape()[0], smooth);
            let mean = stats.iter().map(|(num, den)| num / den).sum::<f64>() / stats.len() as f64;
            Tensor::scalar(1.0 - mean)
        };
        self.tape.push(out, Op::SoftDice { a: self.id, truth: truth.clone(), smooth })
    }
}

/// Joins tensors along `axis`; every other extent must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| Error::contract("concat: no parts"))?;
    let tape = first.tape;
    let out = {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        check_axis("concat", &base, axis)?;
        for v in &values[1..] {
            let s = v.shape();
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!("concat: shape {s:?} incompatible with {base:?} on axis {axis}")));
            }
        }
        let total: usize = values.iter().map(|v| v.shape()[axis]).sum();
        let (outer, _, inner) = split_axis(&base, axis);
        let mut d = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let chunk = v.shape()[axis] * inner;
                d.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Tensor::from_parts(shape, d)
    };
    tape.push(out, Op::Concat { parts: parts.iter().map(|p| p.id).collect(), axis })
}

/// Per-channel Dice numerator `2·Σ p·t + s` and denominator `Σ p + Σ t + s`.
fn dice_stats(p: &[f64], t: &[f64], channels: usize, smooth: f64) -> Vec<(f64, f64)> {
    let n = p.len() / channels;
    (0..channels)
        .map(|c| {
            let (mut inter, mut sp, mut st) = (0.0f64, 0.0f64, 0.0f64);
            for i in c * n..(c + 1) * n {
                let (a, b) = (p[i], t[i]);
                inter += a * b;
                sp += a;
                st += b;
            }
            (2.0 * inter + smooth, sp + st + smooth)
        })
        .collect()
}
