//! Stratified k-fold assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Fold index of every sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, sample: usize) -> usize {
        self.assignments[sample]
    }

    /// Held-out indices of `fold`, ascending.
    pub fn validation_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    /// Indices outside `fold`, ascending.
    pub fn training_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles each class's indices and deals them round-robin. The dealing
/// position carries over from one class to the next, so fold sizes differ
/// by at most one overall as well as per class.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::contract(format!("need at least 2 folds, got {k}")));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0; labels.len()];
    let mut next = 0;
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::contract(format!("class {class} has {} samples, fewer than {k} folds", members.len())));
        }
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignments[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan { k, assignments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels_from_supports(supports: &[usize]) -> Vec<usize> {
        supports.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect()
    }

    #[test]
    fn single_class_of_ten() {
        let plan = stratified_folds(&[0; 10], 5, 1).unwrap();
        assert_eq!(plan.fold_sizes(), vec![2; 5]);
    }

    #[test]
    fn too_small_class_is_rejected() {
        let labels = labels_from_supports(&[10, 3]);
        assert!(matches!(stratified_folds(&labels, 5, 0), Err(Error::Contract(_))));
        assert!(stratified_folds(&labels, 1, 0).is_err());
    }

    #[test]
    fn table_supports_give_equal_folds() {
        let supports = [164, 163, 140, 133];
        let labels = labels_from_supports(&supports);
        for seed in 0..20 {
            let plan = stratified_folds(&labels, 5, seed).unwrap();
            assert_eq!(plan.fold_sizes(), vec![120; 5]);
        }
    }

    proptest! {
        #[test]
        fn folds_partition_and_stratify(
            supports in proptest::collection::vec(5usize..60, 1..5),
            k in 2usize..6,
            seed in any::<u64>(),
        ) {
            let labels = labels_from_supports(&supports);
            let plan = stratified_folds(&labels, k, seed).unwrap();
            let mut seen = vec![0; labels.len()];
            for f in 0..k {
                for i in plan.validation_indices(f) {
                    seen[i] += 1;
                }
                let mut all = plan.validation_indices(f);
                all.extend(plan.training_indices(f));
                all.sort_unstable();
                prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
            for (c, &n) in supports.iter().enumerate() {
                let share = n as f64 / k as f64;
                for f in 0..k {
                    let count = plan.validation_indices(f).iter().filter(|&&i| labels[i] == c).count();
                    prop_assert!((count as f64 - share).abs() <= 1.0);
                }
            }
            let sizes = plan.fold_sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
