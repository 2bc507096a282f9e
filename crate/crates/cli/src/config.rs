//! Run configuration files.
//!
//! A run config is TOML with these tables (unknown keys are rejected):
//!
//! ```toml
//! seed = 1                     # model initialisation and cascade seed
//!
//! [data]                       # dataset and split fractions
//! train = 0.8
//! dev = 0.1
//! test = 0.1
//! seed = 0                     # subset shuffle / synthetic data seed
//! source = { kind = "char_lm", path = "corpus.txt", steps = 16, lowercase = true, max_chars = 30000 }
//! # source = { kind = "seq_classify", steps = 4, vocab = 3, classes = 3, rule = "first_plus_last", samples = 400 }
//!
//! [model]                      # bottom to top; `vocab` and `classes` are filled in from the data
//! layers = ["embedding vocab->16", "lstm 16->32", "dense(tanh) 32->32", "output 32->classes"]
//!
//! [train]
//! optimizer = { kind = "adam", lr = 0.01 }
//! batch_size = 16
//! max_epochs = 40
//! patience = 5                 # optional, default 5
//! clip_norm = 1.0              # optional
//! seed = 0                     # data order and dropout
//! shuffle = true               # optional
//! metric = "perplexity"        # optional: error_rate | perplexity | cer
//!
//! [topdown]
//! partitions = [[1, 1, 1, 1], [2, 2]]   # optional; default: every composition
//!
//! [experiment]
//! seeds = [1, 2, 3, 4, 5]
//! k = 2                        # classifier depth
//! subsets = [5, 10, 20, 40, 80]
//! source_subset = 20           # curve: subset the source run trains on
//! source_epochs = 12           # curve: epochs of the source run, no early stopping
//! ```
//!
//! Relative corpus paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tdt_core::data::{DatasetSource, DatasetSpec};
use tdt_core::experiments::{DEFAULT_CLASSIFIER_DEPTH, SUBSET_PERCENTS};
use tdt_core::training::TrainConfig;
use tdt_core::LayerSpec;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DatasetSpec,
    pub model: ModelSection,
    pub train: TrainConfig,
    #[serde(default)]
    pub topdown: TopdownSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub layers: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopdownSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitions: Option<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_subsets")]
    pub subsets: Vec<usize>,
    #[serde(default = "default_source_subset")]
    pub source_subset: usize,
    #[serde(default = "default_source_epochs")]
    pub source_epochs: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}
fn default_k() -> usize {
    DEFAULT_CLASSIFIER_DEPTH
}
fn default_subsets() -> Vec<usize> {
    SUBSET_PERCENTS.to_vec()
}
fn default_source_subset() -> usize {
    20
}
fn default_source_epochs() -> usize {
    12
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            k: default_k(),
            subsets: default_subsets(),
            source_subset: default_source_subset(),
            source_epochs: default_source_epochs(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| CliError::Parse {
            path: origin.to_path_buf(),
            message: e.message().to_string(),
        })?;
        if let DatasetSource::CharLm { path, .. } = &mut config.data.source {
            if path.is_relative() {
                let base = origin.parent().unwrap_or(Path::new("."));
                *path = base.join(&*path);
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| tdt_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text, path)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(n) = o.max_epochs {
            self.train.max_epochs = n;
        }
        if let Some(p) = o.patience {
            self.train.patience = p;
        }
        if let Some(b) = o.batch_size {
            self.train.batch_size = b;
        }
        if let Some(lr) = o.lr {
            use tdt_core::optim::OptimizerConfig;
            match &mut self.train.optimizer {
                OptimizerConfig::Sgd { lr: l, .. } | OptimizerConfig::Adam { lr: l, .. } => *l = lr,
            }
        }
    }

    /// Layer specs with `vocab` and `classes` replaced by the dataset's
    /// input and output widths.
    pub fn layer_specs(&self, vocab: usize, classes: usize) -> Result<Vec<LayerSpec>, CliError> {
        self.model
            .layers
            .iter()
            .map(|s| {
                let filled = s.replace("vocab", &vocab.to_string()).replace("classes", &classes.to_string());
                filled.parse::<LayerSpec>().map_err(CliError::from)
            })
            .collect()
    }

    /// The effective configuration as TOML.
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Parse {
            path: PathBuf::from("<effective config>"),
            message: e.to_string(),
        })
    }
}
