//! Newline-delimited report files.
//!
//! The first line is a header object
//! `{"format":"tdt-report","version":1,"experiment":..,"seeds":[..],"metadata":{..}}`;
//! every following line is one record
//! `{"experiment":..,"config":..,"seed":..,"metric":..,"value":..}`.
//! Values are written in shortest round-trip form, so parsing a report gives
//! back the exact `f64`s that were emitted.
//!
//! The companion summary is CSV with columns
//! `experiment,config,metric,n,mean,std` (sample standard deviation, 0 for a
//! single value), one row per `(config, metric)` in first-appearance order.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{epoch_label, ExperimentReport};
use crate::topdown::SearchTrace;
use crate::training::FitResult;

pub const REPORT_FORMAT: &str = "tdt-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportHeader {
    pub format: String,
    pub version: u32,
    pub experiment: String,
    pub seeds: Vec<u64>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRecord {
    pub experiment: String,
    pub config: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub config: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

fn json_line<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Corrupt(format!("report encoding: {e}")))
}

/// The report as newline-delimited text. Fails if the report's grid is
/// incomplete.
pub fn render_report(report: &ExperimentReport) -> Result<String> {
    report.validate()?;
    let header = ReportHeader {
        format: REPORT_FORMAT.to_string(),
        version: REPORT_VERSION,
        experiment: report.experiment.clone(),
        seeds: report.seeds.clone(),
        metadata: report.metadata.iter().cloned().collect(),
    };
    let mut out = json_line(&header)?;
    out.push('\n');
    for cell in report.cells() {
        out.push_str(&json_line(&ReportRecord {
            experiment: report.experiment.clone(),
            config: cell.config.clone(),
            seed: cell.seed,
            metric: cell.metric.clone(),
            value: cell.value,
        })?);
        out.push('\n');
    }
    Ok(out)
}

pub fn summarize(report: &ExperimentReport) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for cell in report.cells() {
        let key = (cell.config.clone(), cell.metric.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(cell.value);
    }
    order
        .into_iter()
        .map(|key| {
            let values = &groups[&key];
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                config: key.0,
                metric: key.1,
                n,
                mean,
                std,
            }
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_summary(report: &ExperimentReport) -> String {
    let mut out = String::from("experiment,config,metric,n,mean,std\n");
    for row in summarize(report) {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_field(&report.experiment),
            csv_field(&row.config),
            csv_field(&row.metric),
            row.n,
            row.mean,
            row.std
        ));
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes the records to `path` and the summary to `summary_path`.
pub fn emit_report(report: &ExperimentReport, path: &Path, summary_path: &Path) -> Result<()> {
    write_file(path, &render_report(report)?)?;
    write_file(summary_path, &render_summary(report))
}

pub fn parse_report(text: &str) -> Result<(ReportHeader, Vec<ReportRecord>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines
        .next()
        .ok_or_else(|| Error::Corrupt("report has no header line".into()))?;
    let header: ReportHeader =
        serde_json::from_str(first).map_err(|e| Error::Corrupt(format!("report header: {e}")))?;
    if header.format != REPORT_FORMAT || header.version != REPORT_VERSION {
        return Err(Error::Corrupt(format!(
            "unsupported report {} v{}",
            header.format, header.version
        )));
    }
    let records = lines
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Corrupt(format!("report line {}: {e}", i + 2)))
        })
        .collect::<Result<Vec<ReportRecord>>>()?;
    Ok((header, records))
}

pub fn read_report(path: &Path) -> Result<(ReportHeader, Vec<ReportRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_report(&text)
}

/// Per-epoch `train_loss`, `dev_loss` and `dev_error` of a training run.
pub fn fit_report(fit: &FitResult, seed: u64) -> ExperimentReport {
    let metrics = ["train_loss", "dev_loss", "dev_error"];
    let labels: Vec<String> = (1..=fit.epochs()).map(epoch_label).collect();
    let mut report = ExperimentReport::new("train", &[seed]);
    report.declare(&labels, &[seed], &metrics);
    report.declare(&["best"], &[seed], &["epoch"]);
    for rec in &fit.records {
        let label = epoch_label(rec.epoch);
        report.push(&label, seed, metrics[0], rec.train_loss);
        report.push(&label, seed, metrics[1], rec.dev_loss);
        report.push(&label, seed, metrics[2], rec.dev_error);
    }
    report.push("best", seed, "epoch", fit.best_epoch as f64);
    report
}

/// A greedy cascade as records: `baseline`/`final` dev errors and, per
/// stage, `frozen_top`, `dev_error_after`, `accepted` (1 or 0) and
/// `best_epoch`.
pub fn trace_report(trace: &SearchTrace, seed: u64) -> ExperimentReport {
    let stage_metrics = ["frozen_top", "dev_error_after", "accepted", "best_epoch"];
    let labels: Vec<String> = trace.stages.iter().map(|s| format!("stage={}", s.stage)).collect();
    let mut report = ExperimentReport::new("topdown", &[seed]);
    report.declare(&["baseline", "final"], &[seed], &["dev_error"]);
    report.declare(&labels, &[seed], &stage_metrics);
    report.push("baseline", seed, "dev_error", trace.baseline_dev_error);
    for (label, s) in labels.iter().zip(&trace.stages) {
        report.push(label, seed, "frozen_top", s.frozen_top as f64);
        report.push(label, seed, "dev_error_after", s.dev_error_after);
        report.push(label, seed, "accepted", if s.accepted { 1.0 } else { 0.0 });
        report.push(label, seed, "best_epoch", s.best_epoch as f64);
    }
    report.push("final", seed, "dev_error", trace.final_dev_error);
    report
}
