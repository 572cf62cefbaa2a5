use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Recount everything from raw pairs without the confusion matrix.
struct Oracle {
    precision: Vec<f64>,
    recall: Vec<f64>,
    f1: Vec<f64>,
    support: Vec<u64>,
    accuracy: f64,
}

fn oracle(k: usize, pairs: &[(usize, usize)]) -> Oracle {
    let mut o = Oracle { precision: vec![], recall: vec![], f1: vec![], support: vec![], accuracy: 0.0 };
    for c in 0..k {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let predicted = pairs.iter().filter(|&&(_, p)| p == c).count() as f64;
        let actual = pairs.iter().filter(|&&(t, _)| t == c).count();
        let prec = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let rec = if actual > 0 { tp / actual as f64 } else { 0.0 };
        o.precision.push(prec);
        o.recall.push(rec);
        o.f1.push(if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 });
        o.support.push(actual as u64);
    }
    o.accuracy = pairs.iter().filter(|&&(t, p)| t == p).count() as f64 / pairs.len() as f64;
    o
}

#[test]
fn diagonal_confusion_is_perfect() {
    let pairs: Vec<(usize, usize)> = (0..40).map(|i| (i % 4, i % 4)).collect();
    let r = MetricsReport::from_pairs(4, &pairs).unwrap();
    assert_eq!(r.accuracy, 1.0);
    for m in r.per_class.iter().chain([&r.macro_avg, &r.weighted_avg]) {
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }
    assert!(!r.zero_division);
}

#[test]
fn two_class_hand_example() {
    let cm = ConfusionMatrix::from_rows(&[vec![50, 10], vec![10, 30]]).unwrap();
    let r = MetricsReport::from_confusion(cm, None).unwrap();
    assert!((r.per_class[0].precision - 50.0 / 60.0).abs() < 1e-12);
    assert!((r.per_class[1].precision - 0.75).abs() < 1e-12);
    assert!((r.per_class[0].recall - 50.0 / 60.0).abs() < 1e-12);
    assert!((r.per_class[1].recall - 0.75).abs() < 1e-12);
    assert!((r.accuracy - 0.8).abs() < 1e-12);
}

#[test]
fn headline_accuracy_from_596_of_600() {
    let supports = [164usize, 163, 140, 133];
    let mut pairs = Vec::new();
    for (c, &n) in supports.iter().enumerate() {
        pairs.extend(std::iter::repeat_n((c, c), n));
    }
    for p in pairs.iter_mut().take(4) {
        p.1 = 1;
    }
    let r = MetricsReport::from_pairs(4, &pairs).unwrap();
    assert_eq!(r.confusion.trace(), 596);
    assert!((r.accuracy - 0.9933).abs() <= 1e-4);
}

#[test]
fn zero_division_is_flagged() {
    let r = MetricsReport::from_pairs(3, &[(0, 0), (1, 0)]).unwrap();
    assert!(r.zero_division);
    assert_eq!(r.per_class[2].precision, 0.0);
    assert_eq!(r.per_class[1].f1, 0.0);
    assert!(MetricsReport::from_pairs(3, &[]).is_err());
    assert!(MetricsReport::from_pairs(3, &[(3, 0)]).is_err());
}

#[test]
fn metrics_match_recount_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let k = rng.random_range(2..6);
        let n = rng.random_range(1..200);
        let pairs: Vec<(usize, usize)> = (0..n).map(|_| (rng.random_range(0..k), rng.random_range(0..k))).collect();
        let r = MetricsReport::from_pairs(k, &pairs).unwrap();
        let o = oracle(k, &pairs);
        assert_eq!(r.accuracy, o.accuracy);
        assert_eq!(r.confusion.total(), n as u64);
        for c in 0..k {
            assert_eq!(r.per_class[c].precision, o.precision[c]);
            assert_eq!(r.per_class[c].recall, o.recall[c]);
            assert!((r.per_class[c].f1 - o.f1[c]).abs() <= 1e-12);
            assert_eq!(r.per_class[c].support, o.support[c]);
            assert_eq!(r.per_class[c].support, r.confusion.row_sum(c));
        }
        let f1s: Vec<f64> = r.per_class.iter().map(|m| m.f1).collect();
        let lo = f1s.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = f1s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(r.weighted_avg.f1 >= lo - 1e-12 && r.weighted_avg.f1 <= hi + 1e-12);
    }
}

#[test]
fn mean_iou_matches_set_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let k = rng.random_range(2..5);
        let images = rng.random_range(1..4);
        let mut counts = IouCounts::new(k);
        let mut all_p = Vec::new();
        let mut all_t = Vec::new();
        for _ in 0..images {
            let n = rng.random_range(1..50);
            let p: Vec<u8> = (0..n).map(|_| rng.random_range(0..k as u8)).collect();
            let t: Vec<u8> = (0..n).map(|_| rng.random_range(0..k as u8)).collect();
            counts.record(&p, &t).unwrap();
            all_p.extend(p);
            all_t.extend(t);
        }
        let mut ious = Vec::new();
        for c in 0..k as u8 {
            let inter = all_p.iter().zip(&all_t).filter(|&(&p, &t)| p == c && t == c).count();
            let union = all_p.iter().zip(&all_t).filter(|&(&p, &t)| p == c || t == c).count();
            if union > 0 {
                ious.push(inter as f64 / union as f64);
            }
        }
        let expect = ious.iter().sum::<f64>() / ious.len() as f64;
        assert!((counts.mean_iou().unwrap() - expect).abs() <= 1e-12);
    }
}

#[test]
fn iou_examples() {
    let mut c = IouCounts::new(2);
    c.record(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap();
    assert_eq!(c.mean_iou(), Some(1.0));
    let mut c = IouCounts::new(3);
    c.record(&[0, 0], &[1, 1]).unwrap();
    assert_eq!(c.per_class(), vec![Some(0.0), Some(0.0), None]);
    assert!(c.record(&[0], &[0, 1]).is_err());
    assert_eq!(IouCounts::new(2).mean_iou(), None);
}
