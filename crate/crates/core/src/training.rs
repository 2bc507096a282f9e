//! Joint training with early stopping and per-epoch checkpoints.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::metrics::{cer, Metric};
use crate::model::{LayeredModel, TaskKind};
use crate::optim::{clip_global_norm, Optimizer, OptimizerConfig};
use crate::rng::{purpose, Rng};
use crate::tape::{backward, Tape};
use crate::tensor::cross_entropy_rows;

/// Patience used when none is given: stop after five non-improving epochs.
pub const DEFAULT_PATIENCE: usize = 5;

/// Rows per evaluation batch. Fixed so every evaluation of a model on a
/// dataset sums in the same order.
pub const EVAL_BATCH: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_shuffle")]
    pub shuffle: bool,
    /// Metric that drives early stopping; defaults per task when absent.
    #[serde(default)]
    pub metric: Option<Metric>,
}

fn default_patience() -> usize {
    DEFAULT_PATIENCE
}
fn default_shuffle() -> bool {
    true
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerConfig, batch_size: usize, max_epochs: usize) -> Self {
        Self {
            optimizer,
            batch_size,
            max_epochs,
            patience: DEFAULT_PATIENCE.min(max_epochs),
            clip_norm: None,
            seed: 0,
            shuffle: true,
            metric: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_patience(mut self, patience: usize) -> Self {
        self.patience = patience;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be positive: a fit with no epochs has no records"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn metric_for(&self, task: TaskKind) -> Metric {
        self.metric.unwrap_or(match task {
            TaskKind::CharLm => Metric::Perplexity,
            TaskKind::SeqClassify => Metric::ErrorRate,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_error: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub records: Vec<EpochRecord>,
    /// Full model snapshot after each epoch; `checkpoints[p - 1]` is epoch `p`.
    pub checkpoints: Vec<LayeredModel>,
    /// Epoch number (1-based) with the lowest dev error, earliest on ties.
    pub best_epoch: usize,
}

impl FitResult {
    pub fn best_record(&self) -> &EpochRecord {
        &self.records[self.best_epoch - 1]
    }

    pub fn checkpoint(&self, epoch: usize) -> Option<&LayeredModel> {
        epoch.checked_sub(1).and_then(|i| self.checkpoints.get(i))
    }

    pub fn epochs(&self) -> usize {
        self.records.len()
    }
}

/// Patience-based stopping on a lower-is-better score. Only a strictly lower
/// value counts as an improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records the score for `epoch`; returns true when training should stop.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        match self.best {
            Some((_, best)) if !(score < best) => self.stale += 1,
            _ => {
                self.best = Some((epoch, score));
                self.stale = 0;
            }
        }
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

/// Aggregate eval-mode statistics of a model on a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Assessment {
    /// Mean cross-entropy per target.
    pub loss: f64,
    pub error_rate: f64,
    /// Only for language modelling.
    pub cer: Option<f64>,
    pub targets: usize,
}

impl Assessment {
    pub fn metric(&self, metric: Metric) -> Result<f64> {
        match metric {
            Metric::ErrorRate => Ok(self.error_rate),
            Metric::Perplexity => Ok(self.loss.exp()),
            Metric::Cer => self
                .cer
                .ok_or_else(|| Error::config("cer needs a sequence-labelling task")),
        }
    }
}

fn check_metric(task: TaskKind, metric: Metric) -> Result<()> {
    match (task, metric) {
        (TaskKind::SeqClassify, Metric::Perplexity | Metric::Cer) => Err(Error::config(format!(
            "metric {} does not apply to sequence classification",
            metric.name()
        ))),
        _ => Ok(()),
    }
}

pub fn assess(model: &LayeredModel, dataset: &Dataset) -> Result<Assessment> {
    if dataset.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty dataset"));
    }
    if dataset.task() != model.task() {
        return Err(Error::config("dataset and model tasks differ"));
    }
    let mut ce_sum = 0.0;
    let mut wrong = 0usize;
    let mut targets = 0usize;
    let mut pairs = Vec::new();
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let batch = dataset.batch(chunk);
        let logits = model.predict(&batch)?;
        ce_sum += cross_entropy_rows(&logits, &batch.targets)?.iter().sum::<f64>();
        let predicted = logits.argmax_rows()?;
        wrong += predicted.iter().zip(&batch.targets).filter(|(p, t)| p != t).count();
        targets += batch.targets.len();
        if model.task() == TaskKind::CharLm {
            let b = batch.batch;
            for col in 0..b {
                let hyp: Vec<usize> = (0..batch.steps).map(|t| predicted[t * b + col]).collect();
                let reference: Vec<usize> = (0..batch.steps).map(|t| batch.targets[t * b + col]).collect();
                pairs.push((hyp, reference));
            }
        }
    }
    Ok(Assessment {
        loss: ce_sum / targets as f64,
        error_rate: wrong as f64 / targets as f64,
        cer: (model.task() == TaskKind::CharLm).then(|| cer(&pairs)),
        targets,
    })
}

/// Eval-mode metric of `model` on `dataset`.
pub fn evaluate(model: &LayeredModel, dataset: &Dataset, metric: Metric) -> Result<f64> {
    check_metric(model.task(), metric)?;
    assess(model, dataset)?.metric(metric)
}

/// Trains `model` on `train`, scoring each epoch on `dev` with the
/// configured metric. See [`fit_with_evaluator`].
pub fn fit(model: &mut LayeredModel, train: &Dataset, dev: &Dataset, config: &TrainConfig) -> Result<FitResult> {
    let metric = config.metric_for(model.task());
    check_metric(model.task(), metric)?;
    if dev.is_empty() {
        return Err(Error::contract("dev set is empty"));
    }
    fit_with_evaluator(model, train, config, |m, _| {
        let a = assess(m, dev)?;
        Ok((a.loss, a.metric(metric)?))
    })
}

/// Minibatch training of the unfrozen parameters with early stopping.
///
/// After every epoch `dev_score` returns `(dev_loss, dev_error)` for the
/// current model and the whole model is snapshotted. Training stops once
/// `dev_error` has gone `patience` epochs without strictly improving, or at
/// `max_epochs`. The model is left holding the best epoch's parameters.
pub fn fit_with_evaluator<F>(
    model: &mut LayeredModel,
    train: &Dataset,
    config: &TrainConfig,
    mut dev_score: F,
) -> Result<FitResult>
where
    F: FnMut(&LayeredModel, usize) -> Result<(f64, f64)>,
{
    config.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    if train.task() != model.task() {
        return Err(Error::config("dataset and model tasks differ"));
    }
    let root = Rng::new(config.seed);
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    let trainable = model.has_trainable_params();

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        if config.shuffle {
            root.substream(&[purpose::SHUFFLE, epoch as u64]).stream().shuffle(&mut order);
        }
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = train.batch(chunk);
            let dropout = root.substream(&[purpose::DROPOUT, epoch as u64, bi as u64]);
            let mut tape = Tape::new();
            let (loss, _) = model.loss(&mut tape, &batch, Mode::Train, Some(&dropout))?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    loss: value,
                });
            }
            if trainable {
                let mut grads = backward(&tape, loss)?;
                if let Some(max) = config.clip_norm {
                    clip_global_norm(&mut grads, max);
                }
                optimizer.step(model, &grads)?;
            }
            loss_sum += value * batch.targets.len() as f64;
            count += batch.targets.len();
        }

        let (dev_loss, dev_error) = dev_score(model, epoch)?;
        if !dev_loss.is_finite() || !dev_error.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: train.len().div_ceil(config.batch_size),
                loss: dev_loss,
            });
        }
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / count as f64,
            dev_loss,
            dev_error,
        });
        model.set_trained_epoch(epoch);
        checkpoints.push(model.clone());
        if stopper.observe(epoch, dev_error) {
            break;
        }
    }

    let best_epoch = stopper.best_epoch().expect("at least one epoch ran");
    model.load_state_from(&checkpoints[best_epoch - 1])?;
    Ok(FitResult {
        records,
        checkpoints,
        best_epoch,
    })
}
