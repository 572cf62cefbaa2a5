use super::*;
use crate::dataset::PlantClass;
use crate::gradcheck::check_gradients;

fn sample(cfg: &BackboneConfig, seed: u64) -> Sample {
    use rand::Rng;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = cfg.image_size;
    Sample {
        id: format!("s{seed}"),
        image: Tensor::uniform([3, h, w], -1.0, 1.0, &mut r),
        label: PlantClass::from_index(r.random_range(0..4)).unwrap(),
        mask: Some((0..h * w).map(|_| r.random_range(0..4u8)).collect()),
        growth: Some(r.random_range(0.0..1.0)),
        synthetic: false,
    }
}

#[test]
fn desk_model_output_shapes() {
    let model = HybridModel::new(BackboneConfig::desk(), 1).unwrap();
    let img = sample(&model.config, 2).image;
    let p = model.predict(&img).unwrap();
    assert_eq!(p.class_probs.shape(), &[4]);
    assert_eq!(p.seg_mask.shape(), &[4, 32, 32]);
    let s: f64 = p.class_probs.data().iter().copied().sum();
    assert!((s - 1.0).abs() < 1e-6);
    for i in 0..1024 {
        let s: f64 = (0..4).map(|c| p.seg_mask.data()[c * 1024 + i]).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
    assert_eq!(p.mask_labels().len(), 1024);
    assert!(model.predict(&Tensor::zeros([3, 16, 16])).is_err());
}

#[test]
fn initialization_and_prediction_are_deterministic() {
    let a = HybridModel::new(BackboneConfig::desk(), 7).unwrap();
    let b = HybridModel::new(BackboneConfig::desk(), 7).unwrap();
    assert!(a.params.bits_eq(&b.params));
    let img = sample(&a.config, 3).image;
    let pa = a.predict(&img).unwrap();
    let pb = b.predict(&img).unwrap();
    assert!(pa.class_probs.bits_eq(&pb.class_probs) && pa.seg_mask.bits_eq(&pb.seg_mask));
    let c = HybridModel::new(BackboneConfig::desk(), 8).unwrap();
    assert!(!a.params.bits_eq(&c.params));
}

#[test]
fn every_parameter_receives_a_gradient() {
    let model = HybridModel::new(BackboneConfig::tiny(), 4).unwrap();
    let s = sample(&model.config, 5);
    let (report, _, grads) = model.sample_gradients(&s, &LossWeights::default()).unwrap();
    assert!(report.l_total > 0.0);
    assert_eq!(grads.len(), model.params.len());
    let names: Vec<&str> = model.params.names().collect();
    let grad_names: Vec<&str> = grads.iter().map(|(n, _)| n).collect();
    assert_eq!(names, grad_names);
}

#[test]
fn from_parts_rejects_shape_mismatch() {
    let mut model = HybridModel::new(BackboneConfig::tiny(), 1).unwrap();
    assert!(HybridModel::from_parts(model.config.clone(), model.params.clone()).is_ok());
    model.params.insert("fuse.b", Tensor::zeros([3]));
    assert!(HybridModel::from_parts(model.config.clone(), model.params.clone()).is_err());
}

/// Finite differences through the whole tiny network with respect to the
/// input image and a few parameter tensors.
#[test]
fn tiny_backbone_gradient_check() {
    let cfg = BackboneConfig::tiny();
    let model = HybridModel::new(cfg.clone(), 11).unwrap();
    let s = sample(&cfg, 12);
    let names = ["cnn.0.w", "vit.0.q", "gcn.0.w", "att.w1", "fuse.w"];
    let mut inputs = vec![s.image.clone()];
    inputs.extend(names.iter().map(|n| model.params.get(n).unwrap().clone()));
    let report = check_gradients(&inputs, 1e-3, 13, |tape, vars| {
        let bound = Bound::frozen(tape, &model.params);
        for (n, v) in names.iter().zip(&vars[1..]) {
            bound.bind(n, *v);
        }
        let out = model_forward(&cfg, &bound, vars[0])?;
        Ok(sample_loss(&out, &s, &LossWeights::default())?.0)
    })
    .unwrap();
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn single_sample_batch_matches_sample_loss() {
    let model = HybridModel::new(BackboneConfig::tiny(), 9).unwrap();
    let s = sample(&model.config, 10);
    let (batch, predicted) = model.batch_loss(&[&s], &LossWeights::default()).unwrap();
    let tape = Tape::new();
    let bound = Bound::frozen(&tape, &model.params);
    let out = model_forward(&model.config, &bound, tape.constant(s.image.clone())).unwrap();
    let (_, single) = sample_loss(&out, &s, &LossWeights::default()).unwrap();
    assert!((batch.l_total - single.l_total).abs() < 1e-12);
    assert!((batch.l_seg - single.l_seg).abs() < 1e-12);
    assert_eq!(predicted[0], out.class_probs.value().argmax());
}

/// Recomputes the batch objective from per-sample predictions with plain
/// loops: target-carrier means for CE and MSE, Dice sums pooled over the
/// batch.
#[test]
fn batch_objective_matches_pooled_recount() {
    let model = HybridModel::new(BackboneConfig::tiny(), 11).unwrap();
    let mut samples: Vec<Sample> = (0..4).map(|i| sample(&model.config, 20 + i)).collect();
    samples[1].growth = None;
    samples[2].mask = None;
    let refs: Vec<&Sample> = samples.iter().collect();
    let w = LossWeights::default();
    let (report, _) = model.batch_loss(&refs, &w).unwrap();

    let preds: Vec<Prediction> = samples.iter().map(|s| model.predict(&s.image).unwrap()).collect();
    let cls: f64 = samples.iter().zip(&preds).map(|(s, p)| -p.class_probs.data()[s.label.index()].ln()).sum::<f64>() / 4.0;
    let carriers: Vec<f64> = samples.iter().zip(&preds).filter_map(|(s, p)| s.growth.map(|y| (p.growth - y).powi(2))).collect();
    let growth = carriers.iter().sum::<f64>() / carriers.len() as f64;
    let hw = model.config.image_size.0 * model.config.image_size.1;
    let mut dice = 0.0;
    for k in 0..NUM_CLASSES {
        let (mut inter, mut sum_p, mut sum_t) = (0.0, 0.0, 0.0);
        for (s, p) in samples.iter().zip(&preds) {
            let Some(mask) = &s.mask else { continue };
            for (&prob, &m) in p.seg_mask.data()[k * hw..(k + 1) * hw].iter().zip(mask) {
                let t = f64::from(u8::from(m as usize == k));
                inter += prob * t;
                sum_p += prob;
                sum_t += t;
            }
        }
        dice += 1.0 - (2.0 * inter + 1.0) / (sum_p + sum_t + 1.0);
    }
    dice /= NUM_CLASSES as f64;
    assert!((report.l_cls - cls).abs() < 1e-9, "{} vs {cls}", report.l_cls);
    assert!((report.l_growth - growth).abs() < 1e-9);
    assert!((report.l_seg - dice).abs() < 1e-9, "{} vs {dice}", report.l_seg);
    assert!((report.l_total - (0.5 * cls + 0.3 * dice + 0.2 * growth)).abs() < 1e-9);
    assert!(model.batch_loss(&[], &w).is_err());
}
