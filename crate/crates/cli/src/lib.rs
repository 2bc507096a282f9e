//! `tdt` command-line driver.
//!
//! Every subcommand reads a [`config::RunConfig`], writes the effective
//! config to `<out>/config.toml` and produces checkpoints and report files
//! in the output directory. See the repository README for the file layouts.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tdt_core::checkpoint::{load_checkpoint, save_checkpoint};
use tdt_core::data::{build_corpus, Corpus, Dataset};
use tdt_core::experiments::{classifier_quality_curve, freeze_bottom_control, make_split, transferability_sweep, ExperimentReport};
use tdt_core::metrics::Metric;
use tdt_core::report::{emit_report, fit_report, trace_report};
use tdt_core::topdown::{enumerate_compositions, greedy_topdown, run_partition, Partition};
use tdt_core::training::{evaluate, fit, TrainConfig};
use tdt_core::{build_model, LayeredModel, Rng};

pub mod config;

use config::{Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tdt_core::Error),

    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

impl CliError {
    /// Stable, machine-readable failure category.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Parse { .. } => "config",
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "tdt", version, about = "Top-down layer-wise training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Master seed, overriding `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Epoch budget per training run
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Epochs without dev improvement before stopping
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate, overriding `train.optimizer.lr`.
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Joint training: per-epoch checkpoints, best.ckpt and epoch records.
    Train(Common),
    /// Greedy top-down cascade from a trained checkpoint.
    Topdown {
        #[command(flatten)]
        common: Common,
        /// Trained checkpoint to start from
        #[arg(long)]
        model: PathBuf,
    },
    /// Runs explicit or all freeze schedules from a trained checkpoint.
    Search {
        #[command(flatten)]
        common: Common,
        /// Trained checkpoint to start from
        #[arg(long)]
        model: PathBuf,
        /// Schedule such as `1,1,2`; repeatable. Overrides `topdown.partitions`.
        #[arg(long = "partition")]
        partitions: Vec<String>,
    },
    /// Subset-size transferability sweep.
    Transfer(Common),
    /// Classifier quality against source epoch.
    Curve(Common),
    /// Freeze the bottom layer, retrain the rest of a trained checkpoint.
    Control {
        #[command(flatten)]
        common: Common,
        /// Trained checkpoint to start from
        #[arg(long)]
        model: PathBuf,
    },
    /// Scores a checkpoint on one split of the configured data.
    Eval {
        /// Run configuration (TOML)
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to score
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "dev")]
        split: SplitName,
        /// Metric to report; defaults to the training metric.
        #[arg(long)]
        metric: Option<MetricName>,
    },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum SplitName {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum MetricName {
    ErrorRate,
    Perplexity,
    Cer,
}

impl From<MetricName> for Metric {
    fn from(m: MetricName) -> Self {
        match m {
            MetricName::ErrorRate => Metric::ErrorRate,
            MetricName::Perplexity => Metric::Perplexity,
            MetricName::Cer => Metric::Cer,
        }
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code: 0 on success, 1 on a runtime failure (reported as
/// `error: <category>: <message>` on stderr), 2 on a usage error.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {message}", e.category());
            1
        }
    }
}

struct Run {
    config: RunConfig,
    corpus: Corpus,
    out: PathBuf,
}

impl Run {
    fn open(common: &Common) -> CliResult<Self> {
        let mut config = RunConfig::load(&common.config)?;
        config.apply(&Overrides {
            seed: common.seed,
            max_epochs: common.max_epochs,
            patience: common.patience,
            batch_size: common.batch_size,
            lr: common.lr,
        });
        config.train.validate()?;
        std::fs::create_dir_all(&common.out).map_err(|e| io_error(&common.out, e))?;
        let echo = common.out.join("config.toml");
        std::fs::write(&echo, config.to_toml()?).map_err(|e| io_error(&echo, e))?;
        let corpus = build_corpus(&config.data)?;
        Ok(Run {
            config,
            corpus,
            out: common.out.clone(),
        })
    }

    fn fresh_model(&self) -> CliResult<LayeredModel> {
        let specs = self.config.layer_specs(self.corpus.input_tokens(), self.corpus.classes())?;
        Ok(build_model(&specs, self.config.data.task(), self.config.seed)?)
    }

    fn trained_model(&self, path: &Path) -> CliResult<LayeredModel> {
        let (model, _) = load_checkpoint(path)?;
        if model.task() != self.config.data.task() {
            return Err(tdt_core::Error::Config(format!(
                "checkpoint {} was trained for {:?}, config describes {:?}",
                path.display(),
                model.task(),
                self.config.data.task()
            ))
            .into());
        }
        Ok(model)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn emit(&self, report: &mut ExperimentReport, stem: &str) -> CliResult<()> {
        report
            .metadata
            .push(("config".into(), self.path("config.toml").display().to_string()));
        emit_report(report, &self.path(&format!("{stem}.jsonl")), &self.path(&format!("{stem}.csv")))?;
        Ok(())
    }

    fn save(&self, model: &LayeredModel, name: &str, command: &str) -> CliResult<()> {
        let labels = BTreeMap::from([("command".to_string(), command.to_string())]);
        save_checkpoint(model, labels, &self.path(name))?;
        Ok(())
    }

    fn metric(&self) -> Metric {
        self.config.train.metric_for(self.config.data.task())
    }
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    tdt_core::Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:03}.ckpt")
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Train(common) => train(&Run::open(&common)?),
        Command::Topdown { common, model } => topdown(&Run::open(&common)?, &model),
        Command::Search {
            common,
            model,
            partitions,
        } => search(&Run::open(&common)?, &model, &partitions),
        Command::Transfer(common) => transfer(&Run::open(&common)?),
        Command::Curve(common) => curve(&Run::open(&common)?),
        Command::Control { common, model } => control(&Run::open(&common)?, &model),
        Command::Eval {
            config,
            model,
            split,
            metric,
        } => eval(&config, &model, split, metric),
    }
}

fn train(run: &Run) -> CliResult<()> {
    let mut model = run.fresh_model()?;
    let result = fit(&mut model, &run.corpus.pool, &run.corpus.dev, &run.config.train)?;
    for (i, checkpoint) in result.checkpoints.iter().enumerate() {
        run.save(checkpoint, &checkpoint_name(i + 1), "train")?;
    }
    run.save(&model, "best.ckpt", "train")?;
    run.emit(&mut fit_report(&result, run.config.seed), "records")?;
    let best = result.best_record();
    println!(
        "trained {} epochs; best epoch {} dev {} {}",
        result.epochs(),
        best.epoch,
        run.metric().name(),
        best.dev_error
    );
    Ok(())
}

fn topdown(run: &Run, model_path: &Path) -> CliResult<()> {
    let model = run.trained_model(model_path)?;
    let (result, trace) = greedy_topdown(
        &model,
        &run.corpus.pool,
        &run.corpus.dev,
        &run.config.train,
        &Rng::new(run.config.seed),
    )?;
    run.save(&result, "final.ckpt", "topdown")?;
    run.emit(&mut trace_report(&trace, run.config.seed), "trace")?;
    println!(
        "baseline {} -> final {} ({} of {} stages accepted)",
        trace.baseline_dev_error,
        trace.final_dev_error,
        trace.accepted().count(),
        trace.stages.len()
    );
    Ok(())
}

fn parse_partition(text: &str) -> CliResult<Partition> {
    let parts = text
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| tdt_core::Error::Config(format!("cannot parse partition `{text}`")))?;
    Ok(Partition::new(parts)?)
}

fn search(run: &Run, model_path: &Path, explicit: &[String]) -> CliResult<()> {
    let model = run.trained_model(model_path)?;
    let partitions = if !explicit.is_empty() {
        explicit.iter().map(|p| parse_partition(p)).collect::<CliResult<Vec<_>>>()?
    } else if let Some(list) = &run.config.topdown.partitions {
        list.iter().map(|p| Partition::new(p.clone())).collect::<Result<Vec<_>, _>>()?
    } else {
        enumerate_compositions(model.len())?
    };
    let seed = run.config.seed;
    let metric = run.metric();
    let mut report = ExperimentReport::new("search", &[seed]);
    report.declare(&["baseline"], &[seed], &["dev_error"]);
    report.push("baseline", seed, "dev_error", evaluate(&model, &run.corpus.dev, metric)?);
    println!("{:<16} {:>14}", "partition", metric.name());
    for partition in &partitions {
        let (_, errors) = run_partition(
            &model,
            partition,
            &run.corpus.pool,
            &run.corpus.dev,
            &run.config.train,
            &Rng::new(seed),
        )?;
        let label = format!("partition={partition}");
        let mut metrics: Vec<String> = (1..=errors.len()).map(|s| format!("stage_{s}_dev_error")).collect();
        metrics.push("final_dev_error".into());
        report.declare(&[&label], &[seed], &metrics);
        for (s, e) in errors.iter().enumerate() {
            report.push(&label, seed, format!("stage_{}_dev_error", s + 1), *e);
        }
        let last = *errors.last().expect("a partition has at least one stage");
        report.push(&label, seed, "final_dev_error", last);
        println!("{:<16} {:>14.6}", partition.to_string(), last);
    }
    run.emit(&mut report, "search")
}

fn transfer(run: &Run) -> CliResult<()> {
    let exp = &run.config.experiment;
    let split = make_split(&run.config.data, run.config.train.batch_size)?.restrict(&exp.subsets)?;
    let specs = run.config.layer_specs(run.corpus.input_tokens(), run.corpus.classes())?;
    let mut report = transferability_sweep(&split, &specs, exp.k, &run.config.train, &exp.seeds)?;
    run.emit(&mut report, "sweep")?;
    for (p, _) in &split.subsets {
        let label = tdt_core::experiments::subset_label(*p);
        println!(
            "{label:<12} source {:.6} transferred {:.6}",
            report.mean(&label, "source_dev_error").unwrap_or(f64::NAN),
            report.mean(&label, "transferred_dev_error").unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn curve(run: &Run) -> CliResult<()> {
    let exp = &run.config.experiment;
    let split = make_split(&run.config.data, run.config.train.batch_size)?;
    let source: Dataset = split.subset(exp.source_subset).ok_or_else(|| {
        tdt_core::Error::Config(format!("source_subset {}% is not a subset size", exp.source_subset))
    })?;
    let mut model = run.fresh_model()?;
    let source_cfg = TrainConfig {
        max_epochs: exp.source_epochs,
        patience: exp.source_epochs,
        ..run.config.train.clone()
    };
    let fit_result = fit(&mut model, &source, &split.dev, &source_cfg)?;
    let mut report = classifier_quality_curve(&fit_result, exp.k, &split.unseen_pool(), &split.dev, &run.config.train, &exp.seeds)?;
    run.emit(&mut report, "curve")?;
    println!("source best epoch {} of {}", fit_result.best_epoch, fit_result.epochs());
    Ok(())
}

fn control(run: &Run, model_path: &Path) -> CliResult<()> {
    let model = run.trained_model(model_path)?;
    let seed = run.config.seed;
    let baseline = evaluate(&model, &run.corpus.dev, run.metric())?;
    let (result, error) = freeze_bottom_control(
        &model,
        &run.corpus.pool,
        &run.corpus.dev,
        &run.config.train,
        &Rng::new(seed),
    )?;
    run.save(&result, "control.ckpt", "control")?;
    let mut report = ExperimentReport::new("control", &[seed]);
    report.declare(&["baseline", "control"], &[seed], &["dev_error"]);
    report.push("baseline", seed, "dev_error", baseline);
    report.push("control", seed, "dev_error", error);
    run.emit(&mut report, "control")?;
    println!("baseline {baseline} -> freeze-bottom control {error}");
    Ok(())
}

fn eval(config_path: &Path, model_path: &Path, split: SplitName, metric: Option<MetricName>) -> CliResult<()> {
    let config = RunConfig::load(config_path)?;
    let corpus = build_corpus(&config.data)?;
    let (model, _) = load_checkpoint(model_path)?;
    let metric = metric.map_or_else(|| config.train.metric_for(model.task()), Metric::from);
    let data = match split {
        SplitName::Train => &corpus.pool,
        SplitName::Dev => &corpus.dev,
        SplitName::Test => &corpus.test,
    };
    println!("{} {}", metric.name(), evaluate(&model, data, metric)?);
    Ok(())
}
