//! Transferability experiments on toy tasks.
//!
//! The training pool is shuffled once per split seed and cut into nested
//! prefix subsets (5% inside 10% inside ... inside 80%); the last 20% of the
//! shuffled pool is held back as the unseen pool used for transfer.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{build_corpus, Dataset, DatasetSpec};
use crate::error::{Error, Result};
use crate::layers::LayerSpec;
use crate::model::{build_model, LayeredModel};
use crate::rng::{purpose, Rng};
use crate::topdown::{epoch_search, freeze_top, reinit_bottom, reinit_layers, retrain};
use crate::training::{evaluate, fit, FitResult, TrainConfig};

/// Subset sizes as percentages of the training pool.
pub const SUBSET_PERCENTS: [usize; 5] = [5, 10, 20, 40, 80];

/// Share of the pool held out as unseen transfer data.
pub const UNSEEN_PERCENT: usize = 20;

/// Default classifier depth for transfer experiments.
pub const DEFAULT_CLASSIFIER_DEPTH: usize = 2;

/// Nested subset indices and the unseen remainder for a pool of `n` samples.
/// `subsets[i]` holds the first `n * SUBSET_PERCENTS[i] / 100` entries of a
/// seeded permutation; `unseen` holds the last `n * 20 / 100`.
pub fn split_indices(n: usize, seed: u64) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..n).collect();
    Rng::new(seed)
        .substream(&[purpose::SPLIT])
        .stream()
        .shuffle(&mut perm);
    let subsets = SUBSET_PERCENTS
        .iter()
        .map(|&p| perm[..n * p / 100].to_vec())
        .collect();
    let unseen = perm[n - n * UNSEEN_PERCENT / 100..].to_vec();
    (subsets, unseen)
}

/// Smallest pool whose 5% subset holds at least one batch.
pub fn minimum_pool(batch_size: usize) -> usize {
    (batch_size * 100).div_ceil(SUBSET_PERCENTS[0])
}

#[derive(Clone, Debug)]
pub struct SubsetSplit {
    pub pool: Dataset,
    /// `(percent, indices into pool)`, smallest first.
    pub subsets: Vec<(usize, Vec<usize>)>,
    pub unseen: Vec<usize>,
    pub dev: Dataset,
    pub test: Dataset,
}

impl SubsetSplit {
    pub fn from_pool(pool: Dataset, dev: Dataset, test: Dataset, seed: u64, batch_size: usize) -> Result<Self> {
        let min = minimum_pool(batch_size);
        if pool.len() < min {
            return Err(Error::config(format!(
                "training pool has {} samples; a batch size of {batch_size} needs at least {min}",
                pool.len()
            )));
        }
        let (subsets, unseen) = split_indices(pool.len(), seed);
        Ok(SubsetSplit {
            subsets: SUBSET_PERCENTS.iter().copied().zip(subsets).collect(),
            unseen,
            pool,
            dev,
            test,
        })
    }

    /// Keeps only the listed subset percentages.
    pub fn restrict(mut self, percents: &[usize]) -> Result<Self> {
        for p in percents {
            if !SUBSET_PERCENTS.contains(p) {
                return Err(Error::config(format!(
                    "subset {p}% is not one of {SUBSET_PERCENTS:?}"
                )));
            }
        }
        self.subsets.retain(|(p, _)| percents.contains(p));
        Ok(self)
    }

    pub fn subset(&self, percent: usize) -> Option<Dataset> {
        self.subsets
            .iter()
            .find(|(p, _)| *p == percent)
            .map(|(_, idx)| self.pool.subset(idx))
    }

    pub fn unseen_pool(&self) -> Dataset {
        self.pool.subset(&self.unseen)
    }
}

/// Builds the corpus described by `spec` and splits its training pool.
pub fn make_split(spec: &DatasetSpec, batch_size: usize) -> Result<SubsetSplit> {
    let corpus = build_corpus(spec)?;
    SubsetSplit::from_pool(corpus.pool, corpus.dev, corpus.test, spec.seed, batch_size)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub config: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// A table of `(config, seed, metric) -> value` cells over a declared grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seeds: Vec<u64>,
    /// Free-form provenance such as the config file path.
    pub metadata: Vec<(String, String)>,
    declared: Vec<(String, u64, String)>,
    cells: Vec<Cell>,
}

impl ExperimentReport {
    pub fn new(experiment: impl Into<String>, seeds: &[u64]) -> Self {
        Self {
            experiment: experiment.into(),
            seeds: seeds.to_vec(),
            metadata: Vec::new(),
            declared: Vec::new(),
            cells: Vec::new(),
        }
    }

    /// Declares the full cross product of configs, seeds and metrics.
    pub fn declare<C: AsRef<str>, M: AsRef<str>>(&mut self, configs: &[C], seeds: &[u64], metrics: &[M]) {
        for c in configs {
            for &s in seeds {
                for m in metrics {
                    self.declared.push((c.as_ref().to_string(), s, m.as_ref().to_string()));
                }
            }
        }
    }

    pub fn push(&mut self, config: impl Into<String>, seed: u64, metric: impl Into<String>, value: f64) {
        self.cells.push(Cell {
            config: config.into(),
            seed,
            metric: metric.into(),
            value,
        });
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn declared(&self) -> &[(String, u64, String)] {
        &self.declared
    }

    /// Checks that every declared cell is present exactly once and nothing
    /// undeclared was recorded.
    pub fn validate(&self) -> Result<()> {
        let declared: BTreeSet<(&str, u64, &str)> = self
            .declared
            .iter()
            .map(|(c, s, m)| (c.as_str(), *s, m.as_str()))
            .collect();
        let mut seen = BTreeSet::new();
        for cell in &self.cells {
            let key = (cell.config.as_str(), cell.seed, cell.metric.as_str());
            if !declared.contains(&key) {
                return Err(Error::contract(format!(
                    "{}: undeclared cell {key:?}",
                    self.experiment
                )));
            }
            if !seen.insert(key) {
                return Err(Error::contract(format!("{}: duplicate cell {key:?}", self.experiment)));
            }
        }
        if let Some(missing) = declared.difference(&seen).next() {
            return Err(Error::contract(format!(
                "{}: missing cell {missing:?} ({} of {} present)",
                self.experiment,
                seen.len(),
                declared.len()
            )));
        }
        Ok(())
    }

    pub fn value(&self, config: &str, seed: u64, metric: &str) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.config == config && c.seed == seed && c.metric == metric)
            .map(|c| c.value)
    }

    /// Values of one `(config, metric)` across the report's seeds, in seed order.
    pub fn column(&self, config: &str, metric: &str) -> Vec<f64> {
        self.seeds
            .iter()
            .filter_map(|&s| self.value(config, s, metric))
            .collect()
    }

    pub fn mean(&self, config: &str, metric: &str) -> Option<f64> {
        let col = self.column(config, metric);
        (!col.is_empty()).then(|| col.iter().sum::<f64>() / col.len() as f64)
    }
}

pub fn subset_label(percent: usize) -> String {
    format!("subset={percent}%")
}

pub fn epoch_label(epoch: usize) -> String {
    format!("epoch={epoch}")
}

pub const SWEEP_METRICS: [&str; 4] = [
    "source_dev_error",
    "source_test_error",
    "transferred_dev_error",
    "transferred_test_error",
];

/// Trains a source model on every subset, then freezes its top `k` layers,
/// reinitialises the rest and retrains them on the unseen pool.
///
/// For a given seed the source initialisation, the transfer
/// reinitialisation and the data orders are shared by all subsets, so the
/// subset is the only thing that varies along a row.
pub fn transferability_sweep(
    split: &SubsetSplit,
    specs: &[LayerSpec],
    k: usize,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<ExperimentReport> {
    if split.subsets.is_empty() || seeds.is_empty() {
        return Err(Error::config("transferability sweep needs at least one subset and one seed"));
    }
    let task = split.pool.task();
    let metric = config.metric_for(task);
    let unseen = split.unseen_pool();
    let labels: Vec<String> = split.subsets.iter().map(|(p, _)| subset_label(*p)).collect();
    let mut report = ExperimentReport::new("transferability_sweep", seeds);
    report.declare(&labels, seeds, &SWEEP_METRICS);
    for (percent, indices) in &split.subsets {
        let train = split.pool.subset(indices);
        for &seed in seeds {
            let rng = Rng::new(seed).substream(&[purpose::TRANSFER]);
            let mut model = build_model(specs, task, rng.substream(&[purpose::INIT]).key())?;
            let source_cfg = TrainConfig {
                seed: rng.substream(&[purpose::FIT, 0]).key(),
                ..config.clone()
            };
            fit(&mut model, &train, &split.dev, &source_cfg)?;
            let label = subset_label(*percent);
            report.push(&label, seed, SWEEP_METRICS[0], evaluate(&model, &split.dev, metric)?);
            report.push(&label, seed, SWEEP_METRICS[1], evaluate(&model, &split.test, metric)?);

            freeze_top(&mut model, k)?;
            let n = model.len();
            reinit_bottom(&mut model, n - k, &rng.substream(&[purpose::STAGE]))?;
            let transfer_cfg = TrainConfig {
                seed: rng.substream(&[purpose::FIT, 1]).key(),
                ..config.clone()
            };
            retrain(&mut model, &unseen, &split.dev, &transfer_cfg)?;
            report.push(&label, seed, SWEEP_METRICS[2], evaluate(&model, &split.dev, metric)?);
            report.push(&label, seed, SWEEP_METRICS[3], evaluate(&model, &split.test, metric)?);
        }
    }
    report.validate()?;
    Ok(report)
}

/// Seed column under which a curve report stores the source run's losses.
pub const SOURCE_LABEL_SEED: u64 = 0;

/// Scores the classifier of every epoch of a source run by transfer to the
/// unseen pool, once per seed. The report holds `transferred_dev_error` for
/// each `(epoch, seed)` plus the source run's `source_train_loss` and
/// `source_dev_loss` per epoch under [`SOURCE_LABEL_SEED`].
pub fn classifier_quality_curve(
    fit_result: &FitResult,
    k: usize,
    transfer_train: &Dataset,
    transfer_dev: &Dataset,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<ExperimentReport> {
    if seeds.is_empty() {
        return Err(Error::config("classifier quality curve needs at least one seed"));
    }
    let epochs: Vec<String> = (1..=fit_result.epochs()).map(epoch_label).collect();
    let mut report = ExperimentReport::new("classifier_quality_curve", seeds);
    report.declare(&epochs, seeds, &["transferred_dev_error"]);
    report.declare(&epochs, &[SOURCE_LABEL_SEED], &["source_train_loss", "source_dev_loss"]);
    for rec in &fit_result.records {
        let label = epoch_label(rec.epoch);
        report.push(&label, SOURCE_LABEL_SEED, "source_train_loss", rec.train_loss);
        report.push(&label, SOURCE_LABEL_SEED, "source_dev_loss", rec.dev_loss);
    }
    for &seed in seeds {
        let search = epoch_search(fit_result, k, transfer_train, transfer_dev, config, &Rng::new(seed))?;
        for (i, v) in search.curve.iter().enumerate() {
            report.push(epoch_label(i + 1), seed, "transferred_dev_error", *v);
        }
    }
    report.validate()?;
    Ok(report)
}

/// Mirror image of a top-down stage: freezes layer 0 only, reinitialises
/// layers `1..n` and retrains them. Returns the model and its dev error.
pub fn freeze_bottom_control(
    model: &LayeredModel,
    train: &Dataset,
    dev: &Dataset,
    config: &TrainConfig,
    rng: &Rng,
) -> Result<(LayeredModel, f64)> {
    let n = model.len();
    if n < 2 {
        return Err(Error::contract("freeze-bottom control needs at least two layers"));
    }
    if model.trained_epoch().is_none() {
        return Err(Error::contract("freeze-bottom control needs a trained model"));
    }
    let crng = rng.substream(&[purpose::CONTROL]);
    let mut control = model.clone();
    for i in 0..n {
        control.layer_mut(i).frozen = i == 0;
    }
    reinit_layers(&mut control, 1..n, &crng)?;
    let cfg = TrainConfig {
        seed: crng.substream(&[purpose::FIT]).key(),
        ..config.clone()
    };
    fit(&mut control, train, dev, &cfg)?;
    let error = evaluate(&control, dev, cfg.metric_for(control.task()))?;
    Ok((control, error))
}

/// Ranks with ties given their average rank, starting at 1.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of the average ranks.
/// `None` when fewer than two points or either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Whether the minimum of `curve` (earliest on ties) lies strictly inside.
pub fn has_interior_minimum(curve: &[f64]) -> bool {
    let best = crate::topdown::argmin_earliest(curve);
    curve.len() >= 3 && best > 0 && best < curve.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_for_a_thousand() {
        let (subsets, unseen) = split_indices(1000, 3);
        let sizes: Vec<usize> = subsets.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![50, 100, 200, 400, 800]);
        assert_eq!(unseen.len(), 200);
    }

    #[test]
    fn split_is_deterministic() {
        assert_eq!(split_indices(321, 9), split_indices(321, 9));
        assert_ne!(split_indices(321, 9), split_indices(321, 10));
    }

    #[test]
    fn minimum_pool_arithmetic() {
        assert_eq!(minimum_pool(32), 640);
        assert_eq!(minimum_pool(1), 20);
        assert_eq!(minimum_pool(3), 60);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &[9.0, 7.0, 4.0, 0.5]), Some(-1.0));
        assert_eq!(spearman(&x, &[1.0, 8.0, 27.0, 64.0]), Some(1.0));
        assert_eq!(spearman(&x, &[1.0, 1.0, 1.0, 1.0]), None);
    }

    #[test]
    fn report_grid_validation() {
        let mut r = ExperimentReport::new("t", &[1, 2]);
        r.declare(&["a"], &[1, 2], &["m"]);
        r.push("a", 1, "m", 0.5);
        assert!(matches!(r.validate(), Err(Error::Contract(_))));
        r.push("a", 2, "m", 0.25);
        r.validate().unwrap();
        r.push("b", 2, "m", 0.25);
        assert!(r.validate().is_err());
        assert_eq!(r.column("a", "m"), vec![0.5, 0.25]);
        assert_eq!(r.mean("a", "m"), Some(0.375));
    }

    #[test]
    fn interior_minimum() {
        assert!(has_interior_minimum(&[3.0, 1.0, 2.0]));
        assert!(!has_interior_minimum(&[1.0, 2.0, 3.0]));
        assert!(!has_interior_minimum(&[3.0, 2.0, 1.0]));
        assert!(!has_interior_minimum(&[1.0, 1.0]));
    }
}
