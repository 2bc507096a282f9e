//! Top-down layer-wise training.
//!
//! A trained model is split into a classifier (the top `k` layers, frozen)
//! and a feature extractor (the remaining bottom layers, reinitialised and
//! retrained against the frozen classifier). The greedy cascade grows the
//! frozen block one layer at a time and stops at the first stage whose dev
//! error is worse than the current model's.
//!
//! Every stage draws its reinitialisation and its training order from
//! `rng.substream([STAGE, stage])`, where `stage` counts from 1 within a
//! cascade. The greedy cascade and [`run_partition`] therefore produce the
//! same models for the same schedule.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{init_stream, LayeredModel};
use crate::rng::{purpose, Rng};
use crate::training::{evaluate, fit, FitResult, TrainConfig};

/// An ordered composition `(i, j, ..., r)` of the layer count: the first
/// stage freezes the top `i` layers, the next the top `i + j`, and so on
/// until only the bottom `r` layers are retrained.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Partition {
    parts: Vec<usize>,
}

impl Partition {
    pub fn new(parts: Vec<usize>) -> Result<Self> {
        if parts.len() < 2 {
            return Err(Error::contract(format!(
                "a retraining schedule needs at least two parts, got {parts:?}"
            )));
        }
        if parts.contains(&0) {
            return Err(Error::contract(format!("partition parts must be positive, got {parts:?}")));
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    pub fn total(&self) -> usize {
        self.parts.iter().sum()
    }

    /// Size of the frozen top block at each stage.
    pub fn frozen_tops(&self) -> Vec<usize> {
        self.parts[..self.parts.len() - 1]
            .iter()
            .scan(0, |acc, &p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }
}

impl TryFrom<Vec<usize>> for Partition {
    type Error = Error;

    fn try_from(parts: Vec<usize>) -> Result<Self> {
        Partition::new(parts)
    }
}

impl From<Partition> for Vec<usize> {
    fn from(p: Partition) -> Vec<usize> {
        p.parts
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.parts.iter().map(usize::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Freezes exactly the top `k` layers and unfreezes the rest.
pub fn freeze_top(model: &mut LayeredModel, k: usize) -> Result<()> {
    let n = model.len();
    if k == 0 || k >= n {
        return Err(Error::contract(format!(
            "can freeze between 1 and {} layers of a {n}-layer model, not {k}",
            n.saturating_sub(1)
        )));
    }
    for i in 0..n {
        model.layer_mut(i).frozen = i >= n - k;
    }
    Ok(())
}

/// Size of the frozen top block, or `None` if the frozen flags are not a
/// (possibly empty) contiguous block at the top.
pub fn frozen_top_block(model: &LayeredModel) -> Option<usize> {
    let flags = model.frozen_flags();
    let k = flags.iter().rev().take_while(|&&f| f).count();
    flags[..flags.len() - k].iter().all(|&f| !f).then_some(k)
}

/// Redraws the parameters of the given layers from `rng`, layer `i` from the
/// same substream [`crate::model::build_model`] would use for it.
pub fn reinit_layers(model: &mut LayeredModel, layers: std::ops::Range<usize>, rng: &Rng) -> Result<()> {
    for i in layers {
        let layer = model.layer_mut(i);
        if layer.frozen {
            return Err(Error::contract(format!("layer {i} is frozen and cannot be reinitialised")));
        }
        layer.params = crate::layers::init_layer(&layer.spec, &init_stream(rng, i));
    }
    Ok(())
}

/// Reinitialises the bottom `m` layers; layers `m..` are untouched.
pub fn reinit_bottom(model: &mut LayeredModel, m: usize, rng: &Rng) -> Result<()> {
    let n = model.len();
    if m == 0 || m >= n {
        return Err(Error::contract(format!(
            "can reinitialise between 1 and {} bottom layers of a {n}-layer model, not {m}",
            n.saturating_sub(1)
        )));
    }
    if let Some(i) = (0..m).find(|&i| model.layer(i).frozen) {
        return Err(Error::contract(format!(
            "bottom {m} layers overlap the frozen block at layer {i}"
        )));
    }
    reinit_layers(model, 0..m, rng)
}

/// Trains the unfrozen bottom of a model whose top block is frozen.
pub fn retrain(model: &mut LayeredModel, train: &Dataset, dev: &Dataset, config: &TrainConfig) -> Result<FitResult> {
    match frozen_top_block(model) {
        Some(k) if k >= 1 && k < model.len() => fit(model, train, dev, config),
        _ => Err(Error::contract(format!(
            "retrain needs a contiguous frozen top block, got flags {:?}",
            model.frozen_flags()
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// 1-based position in the cascade.
    pub stage: usize,
    pub frozen_top: usize,
    pub dev_error_before: f64,
    pub dev_error_after: f64,
    pub accepted: bool,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub baseline_dev_error: f64,
    pub stages: Vec<StageRecord>,
    pub final_dev_error: f64,
    /// Frozen flags of the returned model.
    pub final_frozen: Vec<bool>,
}

impl SearchTrace {
    pub fn accepted(&self) -> impl Iterator<Item = &StageRecord> {
        self.stages.iter().filter(|s| s.accepted)
    }
}

fn stage_rng(rng: &Rng, stage: usize) -> Rng {
    rng.substream(&[purpose::STAGE, stage as u64])
}

/// One cascade stage: freeze the top `frozen_top` layers of a copy of
/// `model`, reinitialise and retrain the rest.
fn run_stage(
    model: &LayeredModel,
    frozen_top: usize,
    stage: usize,
    train: &Dataset,
    dev: &Dataset,
    config: &TrainConfig,
    rng: &Rng,
) -> Result<(LayeredModel, FitResult)> {
    let srng = stage_rng(rng, stage);
    let mut candidate = model.clone();
    freeze_top(&mut candidate, frozen_top)?;
    reinit_bottom(&mut candidate, model.len() - frozen_top, &srng)?;
    let cfg = TrainConfig {
        seed: srng.substream(&[purpose::FIT]).key(),
        ..config.clone()
    };
    let result = retrain(&mut candidate, train, dev, &cfg)?;
    Ok((candidate, result))
}

/// Greedy layer-wise top-down training.
///
/// `e` starts as the dev error of `model`. For `i = 1 .. n-1`: copy the
/// current model, freeze its top `i` layers, reinitialise and retrain the
/// bottom `n - i`, and measure `e'`. If `e' > e` the search stops; otherwise
/// the copy becomes the current model and `e = e'`. At most `n - 1` retrains.
pub fn greedy_topdown(
    model: &LayeredModel,
    train: &Dataset,
    dev: &Dataset,
    config: &TrainConfig,
    rng: &Rng,
) -> Result<(LayeredModel, SearchTrace)> {
    let n = model.len();
    if n < 2 {
        return Err(Error::contract("top-down training needs at least two layers"));
    }
    if model.trained_epoch().is_none() {
        return Err(Error::contract("greedy top-down training needs a trained model"));
    }
    let metric = config.metric_for(model.task());
    let baseline = evaluate(model, dev, metric)?;
    let mut current = model.clone();
    let mut e = baseline;
    let mut stages = Vec::new();
    for i in 1..n {
        let (candidate, result) = run_stage(&current, i, i, train, dev, config, rng)?;
        let after = result.best_record().dev_error;
        let accepted = !(after > e);
        stages.push(StageRecord {
            stage: i,
            frozen_top: i,
            dev_error_before: e,
            dev_error_after: after,
            accepted,
            best_epoch: result.best_epoch,
            epochs_run: result.epochs(),
        });
        if !accepted {
            break;
        }
        current = candidate;
        e = after;
    }
    let trace = SearchTrace {
        baseline_dev_error: baseline,
        stages,
        final_dev_error: e,
        final_frozen: current.frozen_flags(),
    };
    Ok((current, trace))
}

/// All ordered compositions of `n` with at least two parts, in
/// lexicographic order. There are `2^(n-1) - 1` of them.
pub fn enumerate_compositions(n: usize) -> Result<Vec<Partition>> {
    if n < 2 {
        return Err(Error::contract(format!("compositions need n >= 2, got {n}")));
    }
    fn extend(remaining: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if remaining == 0 {
            out.push(prefix.clone());
            return;
        }
        for first in 1..=remaining {
            prefix.push(first);
            extend(remaining - first, prefix, out);
            prefix.pop();
        }
    }
    let mut all = Vec::new();
    extend(n, &mut Vec::new(), &mut all);
    Ok(all
        .into_iter()
        .filter(|p| p.len() >= 2)
        .map(|parts| Partition { parts })
        .collect())
}

/// Executes a full cascade schedule without the greedy stopping rule and
/// returns the final model with the dev error after each stage.
pub fn run_partition(
    base: &LayeredModel,
    partition: &Partition,
    train: &Dataset,
    dev: &Dataset,
    config: &TrainConfig,
    rng: &Rng,
) -> Result<(LayeredModel, Vec<f64>)> {
    if partition.total() != base.len() {
        return Err(Error::contract(format!(
            "partition {partition} sums to {} but the model has {} layers",
            partition.total(),
            base.len()
        )));
    }
    if base.trained_epoch().is_none() {
        return Err(Error::contract("partition search needs a trained model"));
    }
    let mut current = base.clone();
    let mut errors = Vec::new();
    for (s, top) in partition.frozen_tops().into_iter().enumerate() {
        let (next, result) = run_stage(&current, top, s + 1, train, dev, config, rng)?;
        errors.push(result.best_record().dev_error);
        current = next;
    }
    Ok((current, errors))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSearch {
    /// Transferred dev error for the classifier of each source epoch, in
    /// epoch order.
    pub curve: Vec<f64>,
    /// 1-based epoch with the lowest transferred error, earliest on ties.
    pub best_epoch: usize,
}

/// Scores the classifier (top `k` layers) of every checkpoint by retraining
/// a fresh feature extractor against it on `transfer_train` and measuring
/// the dev error on `transfer_dev`. Every epoch uses the same
/// reinitialisation and data order so only the classifier varies.
pub fn epoch_search(
    fit_result: &FitResult,
    k: usize,
    transfer_train: &Dataset,
    transfer_dev: &Dataset,
    config: &TrainConfig,
    rng: &Rng,
) -> Result<EpochSearch> {
    if fit_result.checkpoints.is_empty() {
        return Err(Error::contract("epoch search needs at least one checkpoint"));
    }
    let srng = rng.substream(&[purpose::EPOCH_SEARCH]);
    let cfg = TrainConfig {
        seed: srng.substream(&[purpose::FIT]).key(),
        ..config.clone()
    };
    let mut curve = Vec::with_capacity(fit_result.checkpoints.len());
    for checkpoint in &fit_result.checkpoints {
        let mut model = checkpoint.clone();
        freeze_top(&mut model, k)?;
        let n = model.len();
        reinit_bottom(&mut model, n - k, &srng)?;
        let result = retrain(&mut model, transfer_train, transfer_dev, &cfg)?;
        curve.push(result.best_record().dev_error);
    }
    let best_epoch = argmin_earliest(&curve) + 1;
    Ok(EpochSearch { curve, best_epoch })
}

pub(crate) fn argmin_earliest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}
