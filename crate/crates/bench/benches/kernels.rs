use criterion::{criterion_group, criterion_main, Criterion};
use hwdm_bench::{noise_image, rng};
use hwdm_core::imaging::{adaptive_hist_eq, median_filter};
use hwdm_core::{Tape, Tensor};
use std::hint::black_box;

fn conv(c: &mut Criterion) {
    let mut r = rng(1);
    let x = Tensor::uniform([16, 32, 32], -1.0, 1.0, &mut r);
    let k = Tensor::uniform([32, 16, 3, 3], -1.0, 1.0, &mut r);
    c.bench_function("conv2d 16x32x32 -> 32, 3x3", |b| {
        b.iter(|| {
            let tape = Tape::new();
            black_box(tape.constant(x.clone()).conv2d(tape.constant(k.clone()), 1, 1).unwrap().to_tensor())
        })
    });
    c.bench_function("conv2d forward+backward", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let (xv, kv) = (tape.leaf(x.clone()), tape.leaf(k.clone()));
            let loss = xv.conv2d(kv, 1, 1).unwrap().sum().unwrap();
            tape.backward(loss).unwrap();
        })
    });
}

fn matmul(c: &mut Criterion) {
    let mut r = rng(2);
    let a = Tensor::uniform([64, 128], -1.0, 1.0, &mut r);
    let m = Tensor::uniform([128, 64], -1.0, 1.0, &mut r);
    c.bench_function("matmul 64x128x64", |b| {
        b.iter(|| {
            let tape = Tape::new();
            black_box(tape.constant(a.clone()).matmul(tape.constant(m.clone())).unwrap().to_tensor())
        })
    });
}

fn imaging(c: &mut Criterion) {
    let img = noise_image(224, 224, 3, 3);
    c.bench_function("median 5x5, 224x224 rgb", |b| b.iter(|| black_box(median_filter(&img, 5).unwrap())));
    c.bench_function("clahe tile 8, 224x224 rgb", |b| b.iter(|| black_box(adaptive_hist_eq(&img, 8, 2.0).unwrap())));
}

criterion_group!(benches, conv, matmul, imaging);
criterion_main!(benches);
