//! Multi-task training loop and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Sample, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::heads::{LossReport, LossWeights};
use crate::metrics::{ConfusionMatrix, IouCounts, MetricsReport};
use crate::model::{HybridModel, Prediction};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 32, optimizer: AdamConfig::default(), weights: LossWeights::default(), seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be positive"));
        }
        self.optimizer.validate()?;
        self.weights.validate()
    }
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Accuracy of the predictions made while the epoch ran.
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    /// Mean training losses over the epoch.
    pub train_loss: LossReport,
    pub val_loss: Option<LossReport>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: HybridModel,
    /// Parameters of the epoch with the lowest validation (or, without a
    /// validation set, training) total loss.
    pub best_params: ParamStore,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn diverged(err: Error, context: &str) -> Error {
    match err {
        Error::NonFinite { op } => Error::Divergence(format!("non-finite value in {op} ({context})")),
        other => other,
    }
}

fn check_report(report: &LossReport, context: &str) -> Result<()> {
    for (name, v) in [("l_cls", report.l_cls), ("l_seg", report.l_seg), ("l_growth", report.l_growth)] {
        if !v.is_finite() {
            return Err(Error::Divergence(format!("{name} is {v} ({context})")));
        }
    }
    Ok(())
}

/// Trains `model` on `train`, tracking `val` after every epoch.
///
/// Batch membership is drawn once from `seed`; epoch `e` visits the batches
/// in an order shuffled with seed `seed + e`. Fixed membership keeps the
/// pooled Dice term of each batch, and so the epoch losses, a function of
/// the parameters alone.
pub fn train(
    mut model: HybridModel,
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    let mut adam = Adam::new(config.optimizer)?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, 0, model.params.clone());
    let mut members: Vec<usize> = (0..train.len()).collect();
    members.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let batches: Vec<&[usize]> = members.chunks(config.batch_size).collect();
    let mut order: Vec<usize> = (0..batches.len()).collect();
    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        // Batch losses, summed in batch index order so the epoch mean does
        // not depend on the visiting order.
        let mut reports = vec![LossReport::default(); batches.len()];
        let mut correct = 0usize;
        for &b in &order {
            let batch = batches[b];
            let members: Vec<&Sample> = batch.iter().map(|&i| &train[i]).collect();
            let context = format!("epoch {epoch}, batch starting at sample {}", members[0].id);
            let (report, predicted, grads) =
                model.batch_gradients(&members, &config.weights).map_err(|e| diverged(e, &context))?;
            check_report(&report, &context)?;
            reports[b] = report.scaled(batch.len() as f64);
            for (&i, p) in batch.iter().zip(predicted) {
                correct += usize::from(p == train[i].label.index());
            }
            for (name, g) in grads.iter() {
                if !g.is_finite() {
                    return Err(Error::Divergence(format!("gradient of {name} is non-finite (epoch {epoch})")));
                }
            }
            adam.step(&mut model.params, &grads)?;
        }
        let mut totals = LossReport::default();
        reports.iter().for_each(|r| totals.add(r));
        let train_loss = totals.scaled(1.0 / train.len() as f64);
        let (val_acc, val_loss) = if val.is_empty() {
            (None, None)
        } else {
            let (acc, loss) = validation_pass(&model, val, config.batch_size, &config.weights)
                .map_err(|e| diverged(e, &format!("validation, epoch {epoch}")))?;
            (Some(acc), Some(loss))
        };
        let record = EpochRecord { epoch, train_acc: correct as f64 / train.len() as f64, val_acc, train_loss, val_loss };
        let criterion = val_loss.unwrap_or(train_loss).l_total;
        if criterion < best.0 {
            best = (criterion, epoch, model.params.clone());
        }
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { model, best_params: best.2, best_epoch: best.1, history })
}

fn validation_pass(
    model: &HybridModel,
    samples: &[Sample],
    batch_size: usize,
    weights: &LossWeights,
) -> Result<(f64, LossReport)> {
    let mut totals = LossReport::default();
    let mut correct = 0;
    for chunk in samples.chunks(batch_size) {
        let members: Vec<&Sample> = chunk.iter().collect();
        let (report, predicted) = model.batch_loss(&members, weights)?;
        check_report(&report, &format!("validation batch starting at sample {}", chunk[0].id))?;
        totals.add(&report.scaled(chunk.len() as f64));
        for (s, p) in chunk.iter().zip(predicted) {
            correct += usize::from(p == s.label.index());
        }
    }
    let n = samples.len() as f64;
    Ok((correct as f64 / n, totals.scaled(1.0 / n)))
}

/// Predictions for every sample, in order.
pub fn predict_all(model: &HybridModel, samples: &[Sample]) -> Result<Vec<Prediction>> {
    samples.iter().map(|s| model.predict(&s.image)).collect()
}

/// Metrics of `predictions` against the labels and masks of `samples`.
pub fn evaluate_predictions(samples: &[Sample], predictions: &[Prediction]) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::contract("cannot evaluate an empty sample set"));
    }
    if samples.len() != predictions.len() {
        return Err(Error::dim("one prediction per sample required"));
    }
    let mut confusion = ConfusionMatrix::new(NUM_CLASSES);
    let mut iou = IouCounts::new(NUM_CLASSES);
    let mut any_mask = false;
    for (s, p) in samples.iter().zip(predictions) {
        confusion.record(s.label.index(), p.predicted_class())?;
        if let Some(mask) = &s.mask {
            iou.record(&p.mask_labels(), mask)?;
            any_mask = true;
        }
    }
    MetricsReport::from_confusion(confusion, any_mask.then_some(iou))
}

pub fn evaluate(model: &HybridModel, samples: &[Sample]) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::contract("cannot evaluate an empty sample set"));
    }
    evaluate_predictions(samples, &predict_all(model, samples)?)
}
