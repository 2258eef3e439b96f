//! Result serialization: per-fold and summary CSVs, per-epoch history
//! CSVs, fold-resume JSON, and multi-arm report combination.
//!
//! Schema contract (stable for scripting):
//! - folds:   `spec,mode,fold,test_acc,best_epoch,epochs_run,seconds`
//! - summary: `spec,mode,mean_acc,std_acc,delta_pp_vs_baseline`
//! - history: `epoch,train_loss,train_acc,val_loss,val_acc`
//!
//! Floats are written in shortest round-trip form, so a parsed value is
//! bit-identical to the written one and summary statistics recompute
//! exactly from fold rows. The `seconds` column is wall-clock timing and
//! is the one field exempt from byte-for-byte determinism guarantees.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::{ExperimentReport, FoldResult};

/// One row of the per-fold CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub spec: String,
    pub mode: String,
    pub fold: usize,
    pub test_acc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub seconds: f64,
}

/// One row of the summary CSV (one experiment arm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub spec: String,
    pub mode: String,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub delta_pp_vs_baseline: Option<f64>,
}

impl SummaryRow {
    pub fn from_report(report: &ExperimentReport) -> Self {
        SummaryRow {
            spec: report.spec_label.clone(),
            mode: report.mode.label().to_string(),
            mean_acc: report.mean_acc,
            std_acc: report.std_acc,
            delta_pp_vs_baseline: report.delta_pp_vs_baseline,
        }
    }
}

/// One row of a per-fold training-history CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub fn fold_rows(report: &ExperimentReport) -> Vec<FoldRow> {
    report
        .folds
        .iter()
        .map(|f| FoldRow {
            spec: report.spec_label.clone(),
            mode: report.mode.label().to_string(),
            fold: f.fold,
            test_acc: f.test_acc,
            best_epoch: f.best_epoch,
            epochs_run: f.epochs_run(),
            seconds: f.seconds,
        })
        .collect()
}

pub fn write_folds_csv(path: &Path, report: &ExperimentReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in fold_rows(report) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_folds_csv(path: &Path) -> Result<Vec<FoldRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: Vec<FoldRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    Ok(rows)
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: Vec<SummaryRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    Ok(rows)
}

pub fn write_history_csv(path: &Path, fold: &FoldResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (i, e) in fold.history.iter().enumerate() {
        w.serialize(HistoryRow {
            epoch: i + 1,
            train_loss: e.train_loss,
            train_acc: e.train_acc,
            val_loss: e.val_loss,
            val_acc: e.val_acc,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv(path: &Path) -> Result<Vec<HistoryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: Vec<HistoryRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    Ok(rows)
}

/// Persist a completed fold so a rerun can skip it.
pub fn save_fold_json(path: &Path, fold: &FoldResult) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, fold)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_fold_json(path: &Path) -> Result<FoldResult> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

/// Recursively collect every `summary.csv` under `dir`, in sorted path
/// order, and concatenate their rows.
pub fn collect_summaries(dir: &Path) -> Result<Vec<SummaryRow>> {
    let mut files = Vec::new();
    find_summaries(dir, &mut files)?;
    files.sort();
    let mut rows = Vec::new();
    for f in files {
        rows.extend(read_summary_csv(&f)?);
    }
    if rows.is_empty() {
        return Err(Error::EmptyResult);
    }
    Ok(rows)
}

fn find_summaries(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            find_summaries(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "summary.csv") {
            out.push(path);
        }
    }
    Ok(())
}

/// Fill in each row's delta against the baseline arm of the same mode
/// and sort by mean accuracy descending (ties by spec, then mode).
///
/// Every mode present must contain exactly one row whose spec equals
/// `baseline_label`; that row's delta is 0 by construction.
pub fn combine_summaries(mut rows: Vec<SummaryRow>, baseline_label: &str) -> Result<Vec<SummaryRow>> {
    let mut modes: Vec<String> = rows.iter().map(|r| r.mode.clone()).collect();
    modes.sort();
    modes.dedup();
    for mode in &modes {
        let matches: Vec<f64> = rows
            .iter()
            .filter(|r| &r.mode == mode && r.spec == baseline_label)
            .map(|r| r.mean_acc)
            .collect();
        let base_mean = match matches.as_slice() {
            [] => {
                return Err(Error::BadRunState(format!(
                    "no baseline arm {baseline_label:?} among {mode} runs"
                )))
            }
            [m] => *m,
            _ => {
                return Err(Error::BadRunState(format!(
                    "baseline {baseline_label:?} appears {} times among {mode} runs",
                    matches.len()
                )))
            }
        };
        for r in rows.iter_mut().filter(|r| &r.mode == mode) {
            r.delta_pp_vs_baseline = Some((r.mean_acc - base_mean) * 100.0);
        }
    }
    rows.sort_by(|a, b| {
        b.mean_acc
            .partial_cmp(&a.mean_acc)
            .unwrap()
            .then_with(|| a.spec.cmp(&b.spec))
            .then_with(|| a.mode.cmp(&b.mode))
    });
    Ok(rows)
}
