use criterion::{criterion_group, criterion_main, Criterion};
use hwdm_bench::sample;
use hwdm_core::{BackboneConfig, HybridModel, LossWeights};
use std::hint::black_box;

fn desk_model(c: &mut Criterion) {
    let cfg = BackboneConfig::desk();
    let model = HybridModel::new(cfg.clone(), 1).unwrap();
    let samples: Vec<_> = (0..8).map(|i| sample(&cfg, i)).collect();
    let batch: Vec<_> = samples.iter().collect();
    let weights = LossWeights::default();
    c.bench_function("desk forward, 1 image", |b| b.iter(|| black_box(model.predict(&samples[0].image).unwrap())));
    c.bench_function("desk forward+backward, batch 8", |b| {
        b.iter(|| black_box(model.batch_gradients(&batch, &weights).unwrap()))
    });
}

criterion_group!(benches, desk_model);
criterion_main!(benches);
