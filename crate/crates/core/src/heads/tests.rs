use super::*;
use crate::autodiff::Tape;
use crate::gradcheck::check_gradients;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Scalar soft-Dice reference over `[K, P]` planes.
fn dice_oracle(p: &[f64], t: &[f64], k: usize, smooth: f64) -> f64 {
    let n = p.len() / k;
    let mut acc = 0.0;
    for c in 0..k {
        let (mut inter, mut sp, mut st) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..n {
            let (a, b) = (p[c * n + i], t[c * n + i]);
            inter += a * b;
            sp += a;
            st += b;
        }
        acc += (2.0 * inter + smooth) / (sp + st + smooth);
    }
    1.0 - acc / k as f64
}

fn hard(labels: &[usize], k: usize, h: usize, w: usize) -> Tensor {
    let hw = h * w;
    Tensor::from_fn([k, h, w], |i| if labels[i % hw] == i / hw { 1.0 } else { 0.0 })
}

#[test]
fn classify_head_examples() {
    let tape = Tape::new();
    let f = tape.constant(Tensor::uniform([6], -1.0, 1.0, &mut rng(1)));
    let probs = classify_head(f, tape.constant(Tensor::zeros([6, 4])), tape.constant(Tensor::zeros([4]))).unwrap();
    assert_eq!(probs.value().data(), &[0.25; 4]);

    let w = Tensor::uniform([6, 4], -1.0, 1.0, &mut rng(2));
    let b = Tensor::uniform([4], -1.0, 1.0, &mut rng(3));
    let base = classify_head(f, tape.constant(w.clone()), tape.constant(b.clone())).unwrap().to_tensor();
    let shifted_b = Tensor::from_fn([4], |i| b.data()[i] + 5.0);
    let shifted = classify_head(f, tape.constant(w.clone()), tape.constant(shifted_b)).unwrap().to_tensor();
    assert_eq!(base.argmax(), shifted.argmax());

    let fv = f.to_tensor();
    let logits: Vec<f64> = (0..4).map(|j| b.data()[j] + (0..6).map(|i| fv.data()[i] * w.get(&[i, j])).sum::<f64>()).collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    for (p, l) in base.data().iter().zip(&logits) {
        assert!((p - l.exp() / z).abs() < 1e-6);
    }
    assert!(classify_head(f, tape.constant(Tensor::zeros([5, 4])), tape.constant(Tensor::zeros([4]))).is_err());
}

#[test]
fn cross_entropy_examples() {
    let tape = Tape::new();
    let ce = |p: &[f64], label| {
        cross_entropy(tape.constant(Tensor::new([p.len()], p.to_vec()).unwrap()), label).unwrap().item().unwrap()
    };
    assert_eq!(ce(&[0.0, 1.0, 0.0, 0.0], 1), 0.0);
    assert!((ce(&[0.25; 4], 2) - 4f64.ln()).abs() < 1e-6);
    assert!((ce(&[0.5, 0.5, 0.0, 0.0], 0) - 2f64.ln()).abs() < 1e-6);
    assert!((ce(&[1.0, 0.0, 0.0, 0.0], 3) - (1e-12f64).ln().abs()).abs() < 1e-3);
    let p = tape.constant(Tensor::full([4], 0.25));
    assert!(matches!(cross_entropy(p, 4), Err(Error::Contract(_))));
}

#[test]
fn segment_head_examples() {
    let tape = Tape::new();
    let spatial = tape.constant(Tensor::uniform([5, 4, 4], -1.0, 1.0, &mut rng(4)));
    let zero =
        segment_head(spatial, tape.constant(Tensor::zeros([4, 5, 1, 1])), tape.constant(Tensor::zeros([4])), (16, 16)).unwrap();
    assert_eq!(zero.shape(), vec![4, 16, 16]);
    assert!(zero.value().data().iter().all(|&v| v == 0.25));

    let k = tape.constant(Tensor::uniform([4, 5, 1, 1], -2.0, 2.0, &mut rng(5)));
    let b = tape.constant(Tensor::uniform([4], -1.0, 1.0, &mut rng(6)));
    let m = segment_head(spatial, k, b, (12, 20)).unwrap().to_tensor();
    assert_eq!(m.shape(), &[4, 12, 20]);
    let hw = 240;
    for p in 0..hw {
        let s: f64 = (0..4).map(|c| m.data()[c * hw + p] as f64).sum();
        assert!((s - 1.0).abs() <= 1e-6);
    }
    assert!(segment_head(spatial, tape.constant(Tensor::zeros([4, 5, 3, 3])), b, (4, 4)).is_err());
}

#[test]
fn dice_examples() {
    let tape = Tape::new();
    // Perfect hard prediction over 1024 pixels.
    let mut r = rng(7);
    let labels: Vec<usize> = (0..1024).map(|_| r.random_range(0..4)).collect();
    let truth = hard(&labels, 4, 32, 32);
    let loss = dice_loss(tape.constant(truth.clone()), &truth).unwrap().item().unwrap();
    assert!(loss.abs() <= 1e-3);

    // Disjoint two-class masks.
    let a: Vec<usize> = (0..1024).map(|i| i % 2).collect();
    let b: Vec<usize> = a.iter().map(|&v| 1 - v).collect();
    let loss = dice_loss(tape.constant(hard(&a, 2, 32, 32)), &hard(&b, 2, 32, 32)).unwrap().item().unwrap();
    assert!(loss > 0.99 && loss <= 1.0);

    // Four foreground pixels, two of them covered.
    let truth = Tensor::new([1, 2, 4], vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let pred = Tensor::new([1, 2, 4], vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let loss = dice_loss_smoothed(tape.constant(pred), &truth, 0.0).unwrap().item().unwrap();
    assert!((loss as f64 - 1.0 / 3.0).abs() < 1e-6);

    let wrong = Tensor::zeros([1, 2, 3]);
    assert!(matches!(dice_loss(tape.constant(truth.clone()), &wrong), Err(Error::Dimension(_))));
}

#[test]
fn dice_matches_scalar_oracle() {
    let mut r = rng(8);
    for _ in 0..50 {
        let tape = Tape::new();
        let (k, h, w) = (r.random_range(1..5), r.random_range(1..6), r.random_range(1..6));
        let logits = tape.constant(Tensor::uniform([k, h, w], -3.0, 3.0, &mut r));
        let p = logits.softmax(0).unwrap();
        let labels: Vec<usize> = (0..h * w).map(|_| r.random_range(0..k)).collect();
        let truth = hard(&labels, k, h, w);
        let got = dice_loss(p, &truth).unwrap().item().unwrap() as f64;
        let expect = dice_oracle(p.value().data(), truth.data(), k, 1.0);
        assert!((got - expect).abs() <= 1e-5, "{got} vs {expect}");
    }
}

proptest! {
    #[test]
    fn dice_is_bounded(seed in any::<u64>(), k in 1usize..5, h in 1usize..8, w in 1usize..8) {
        let mut r = rng(seed);
        let tape = Tape::new();
        let p = tape.constant(Tensor::uniform([k, h, w], -4.0, 4.0, &mut r)).softmax(0).unwrap();
        let labels: Vec<usize> = (0..h * w).map(|_| r.random_range(0..k)).collect();
        let loss = dice_loss(p, &hard(&labels, k, h, w)).unwrap().item().unwrap();
        prop_assert!((0.0..=1.0).contains(&loss));
    }

    /// Moving one predicted pixel from a false positive onto a missed
    /// truth pixel keeps both mask sizes and grows the overlap.
    #[test]
    fn dice_never_increases_with_overlap(n in 4usize..40, truth_len in 1usize..20, overlap in 0usize..20, seed in any::<u64>()) {
        let truth_len = truth_len.min(n - 1);
        let pred_len = (truth_len + seed as usize % 3).min(n);
        let overlap = overlap.min(truth_len.min(pred_len));
        let make = |ov: usize| {
            let truth = Tensor::from_fn([1, 1, n], |i| if i < truth_len { 1.0 } else { 0.0 });
            // Overlap on the first `ov` truth pixels, the rest past the truth region.
            let pred = Tensor::from_fn([1, 1, n], |i| {
                let inside = i < ov;
                let outside = i >= truth_len && i < truth_len + (pred_len - ov);
                if inside || outside { 1.0 } else { 0.0 }
            });
            (pred, truth)
        };
        prop_assume!(truth_len + pred_len - overlap <= n && overlap < truth_len.min(pred_len));
        let tape = Tape::new();
        let (p0, t0) = make(overlap);
        let (p1, t1) = make(overlap + 1);
        let l0 = dice_loss(tape.constant(p0), &t0).unwrap().item().unwrap();
        let l1 = dice_loss(tape.constant(p1), &t1).unwrap().item().unwrap();
        prop_assert!(l1 <= l0);
    }
}

#[test]
fn mse_examples_and_gradient() {
    let tape = Tape::new();
    assert_eq!(mse_loss(tape.constant(Tensor::scalar(0.7)), 0.7).unwrap().item().unwrap(), 0.0);
    assert_eq!(mse_loss(tape.constant(Tensor::scalar(1.5)), 1.0).unwrap().item().unwrap(), 0.25);
    let y = tape.leaf(Tensor::scalar(0.3));
    let l = mse_loss(y, 1.1).unwrap();
    tape.backward(l).unwrap();
    assert!((y.grad().unwrap().item().unwrap() - 2.0 * (0.3 - 1.1)).abs() < 1e-6);
    for seed in 0..20 {
        let x = Tensor::uniform([], -2.0, 2.0, &mut rng(seed));
        let target = (seed as f64) * 0.1 - 1.0;
        let report = check_gradients(&[x], 1e-3, seed, |_, v| mse_loss(v[0], target)).unwrap();
        assert!(report.passes(1e-3), "{report:?}");
    }
}

#[test]
fn cross_entropy_and_dice_gradients() {
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let logits = Tensor::uniform([4], -2.0, 2.0, &mut r);
        let label = r.random_range(0..4);
        let report = check_gradients(&[logits], 1e-3, seed, |_, v| cross_entropy(v[0].softmax(0)?, label)).unwrap();
        assert!(report.passes(1e-3), "{report:?}");

        let probs = Tensor::uniform([3, 3, 4], 0.05, 0.95, &mut r);
        let labels: Vec<usize> = (0..12).map(|_| r.random_range(0..3)).collect();
        let truth = hard(&labels, 3, 3, 4);
        let report = check_gradients(&[probs], 1e-3, seed, |_, v| dice_loss(v[0], &truth)).unwrap();
        assert!(report.passes(1e-3), "{report:?}");
    }
}

#[test]
fn total_loss_examples() {
    let tape = Tape::new();
    let one = tape.constant(Tensor::scalar(1.0));
    let all = TaskLosses { cls: Some(one), seg: Some(one), growth: Some(one) };
    let (total, report) = total_loss(&all, &LossWeights::default()).unwrap();
    assert!((total.item().unwrap() - 1.0).abs() < 1e-6);
    assert!((report.l_total - 1.0).abs() < 1e-6);

    let parts = TaskLosses {
        cls: Some(tape.constant(Tensor::scalar(0.7))),
        seg: Some(tape.constant(Tensor::scalar(0.2))),
        growth: Some(tape.constant(Tensor::scalar(0.9))),
    };
    let single = LossWeights { alpha: 1.0, beta: 0.0, gamma: 0.0 };
    let (total, _) = total_loss(&parts, &single).unwrap();
    assert_eq!(total.item().unwrap(), 0.7);

    let zero = tape.constant(Tensor::scalar(0.0));
    let zeros = TaskLosses { cls: Some(zero), seg: Some(zero), growth: Some(zero) };
    assert_eq!(total_loss(&zeros, &LossWeights::default()).unwrap().1.l_total, 0.0);

    let none = LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0 };
    assert!(matches!(total_loss(&parts, &none), Err(Error::Contract(_))));

    let partial = TaskLosses { cls: Some(tape.constant(Tensor::scalar(2.0))), seg: None, growth: None };
    let (_, report) = total_loss(&partial, &LossWeights::default()).unwrap();
    assert_eq!(report.l_seg, 0.0);
    assert!((report.l_total - 1.0).abs() < 1e-6);
}

#[test]
fn total_loss_is_linear_in_each_component() {
    let mut r = rng(9);
    for _ in 0..50 {
        let tape = Tape::new();
        let c: [f64; 3] = [r.random_range(0.0..3.0), r.random_range(0.0..3.0), r.random_range(0.0..3.0)];
        let w = LossWeights { alpha: r.random_range(0.0..1.0), beta: r.random_range(0.0..1.0), gamma: r.random_range(0.0..1.0) };
        let losses = TaskLosses {
            cls: Some(tape.constant(Tensor::scalar(c[0]))),
            seg: Some(tape.constant(Tensor::scalar(c[1]))),
            growth: Some(tape.constant(Tensor::scalar(c[2]))),
        };
        let (_, report) = total_loss(&losses, &w).unwrap();
        let expect = w.alpha * c[0] + w.beta * c[1] + w.gamma * c[2];
        assert!((report.l_total - expect).abs() < 1e-5);
    }
}
