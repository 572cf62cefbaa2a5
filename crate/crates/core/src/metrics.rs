//! Classification and segmentation metrics.

use crate::error::{Error, Result};

/// Counts indexed `[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_pairs(classes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::new(classes);
        for &(t, p) in pairs {
            m.record(t, p)?;
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::dim("confusion matrix must be square"));
        }
        Ok(Self { classes: k, counts: rows.concat() })
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return Err(Error::contract(format!("pair ({truth},{predicted}) outside {} classes", self.classes)));
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, predicted)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes).map(<[u64]>::to_vec).collect()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::dim("cannot merge confusion matrices of different sizes"));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// Pixel intersection and union counts per class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IouCounts {
    pub intersection: Vec<u64>,
    pub union: Vec<u64>,
}

impl IouCounts {
    pub fn new(classes: usize) -> Self {
        Self { intersection: vec![0; classes], union: vec![0; classes] }
    }

    pub fn record(&mut self, predicted: &[u8], truth: &[u8]) -> Result<()> {
        if predicted.len() != truth.len() {
            return Err(Error::dim(format!("mask lengths {} and {} differ", predicted.len(), truth.len())));
        }
        let k = self.union.len();
        for (&p, &t) in predicted.iter().zip(truth) {
            let (p, t) = (p as usize, t as usize);
            if p >= k || t >= k {
                return Err(Error::contract(format!("mask value outside {k} classes")));
            }
            if p == t {
                self.intersection[p] += 1;
                self.union[p] += 1;
            } else {
                self.union[p] += 1;
                self.union[t] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &IouCounts) {
        self.intersection.iter_mut().zip(&other.intersection).for_each(|(a, b)| *a += b);
        self.union.iter_mut().zip(&other.union).for_each(|(a, b)| *a += b);
    }

    /// IoU of each class; `None` where neither mask contains the class.
    pub fn per_class(&self) -> Vec<Option<f64>> {
        self.intersection.iter().zip(&self.union).map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64)).collect()
    }

    /// Mean over classes that occur in either mask.
    pub fn mean_iou(&self) -> Option<f64> {
        let present: Vec<f64> = self.per_class().into_iter().flatten().collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: ClassMetrics,
    pub weighted_avg: ClassMetrics,
    pub iou: Option<IouCounts>,
    pub mean_iou: Option<f64>,
    /// Set when some precision, recall or F1 had a zero denominator and was
    /// reported as 0.
    pub zero_division: bool,
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_confusion(confusion: ConfusionMatrix, iou: Option<IouCounts>) -> Result<Self> {
        let total = confusion.total();
        if total == 0 {
            return Err(Error::contract("no evaluated samples"));
        }
        let mut zero_division = false;
        let per_class: Vec<ClassMetrics> = (0..confusion.classes())
            .map(|c| {
                let tp = confusion.get(c, c);
                let precision = ratio(tp, confusion.col_sum(c), &mut zero_division);
                let recall = ratio(tp, confusion.row_sum(c), &mut zero_division);
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    zero_division = true;
                    0.0
                };
                ClassMetrics { precision, recall, f1, support: confusion.row_sum(c) }
            })
            .collect();
        let k = per_class.len() as f64;
        let macro_avg = ClassMetrics {
            precision: per_class.iter().map(|m| m.precision).sum::<f64>() / k,
            recall: per_class.iter().map(|m| m.recall).sum::<f64>() / k,
            f1: per_class.iter().map(|m| m.f1).sum::<f64>() / k,
            support: total,
        };
        let w = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64;
        let weighted_avg =
            ClassMetrics { precision: w(|m| m.precision), recall: w(|m| m.recall), f1: w(|m| m.f1), support: total };
        let accuracy = confusion.trace() as f64 / total as f64;
        let mean_iou = iou.as_ref().and_then(IouCounts::mean_iou);
        Ok(Self { confusion, per_class, accuracy, macro_avg, weighted_avg, iou, mean_iou, zero_division })
    }

    pub fn from_pairs(classes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        Self::from_confusion(ConfusionMatrix::from_pairs(classes, pairs)?, None)
    }
}

#[cfg(test)]
mod tests;
