//! Experiment reports: JSON, plain-text table and per-fold CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::folds::ShotSize;
use crate::error::Result;
use crate::losses::LossKind;

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub loss: LossKind,
    pub inference: String,
    pub hyperparameters: BTreeMap<String, f64>,
    pub mean: f64,
    pub std: f64,
    pub per_fold: Vec<f64>,
    pub p_value: Option<f64>,
    pub starred: bool,
    pub grid_points: usize,
    pub failed_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub classes: usize,
    pub shot_size: ShotSize,
    pub n_folds: usize,
    pub master_seed: u64,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<String>,
    pub decisions: Vec<String>,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn is_significant(p_value: Option<f64>) -> bool {
    p_value.is_some_and(|p| p < SIGNIFICANCE_LEVEL)
}

/// Percent cell `mean±std`, with a trailing `*` when starred.
pub fn format_cell(mean: f64, std: f64, starred: bool) -> String {
    format!("{:.2}±{:.2}{}", 100.0 * mean, 100.0 * std, if starred { "*" } else { "" })
}

impl ReportRow {
    pub fn cell(&self) -> String {
        format_cell(self.mean, self.std, self.starred)
    }
}

impl ExperimentReport {
    pub fn column_title(&self) -> String {
        format!("{} ({})", self.dataset, self.shot_size)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,fold,macro_f1\n");
        for r in &self.rows {
            for (f, v) in r.per_fold.iter().enumerate() {
                let _ = writeln!(out, "\"{}\",{f},{v}", r.label);
            }
        }
        out
    }
}

/// Rows are losses, columns are `dataset (shot)`; missing cells are left blank.
pub fn render_table(reports: &[ExperimentReport]) -> String {
    let mut labels: Vec<&str> = Vec::new();
    for r in reports {
        for row in &r.rows {
            if !labels.contains(&row.label.as_str()) {
                labels.push(&row.label);
            }
        }
    }
    let mut grid: Vec<Vec<String>> = vec![std::iter::once("Model".to_string())
        .chain(reports.iter().map(ExperimentReport::column_title))
        .collect()];
    for label in labels {
        let mut line = vec![label.to_string()];
        for r in reports {
            line.push(r.rows.iter().find(|row| row.label == label).map(ReportRow::cell).unwrap_or_default());
        }
        grid.push(line);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, line) in grid.iter().enumerate() {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    if reports.iter().any(|r| r.rows.iter().any(|row| row.starred)) {
        out.push_str(&format!("* p < {SIGNIFICANCE_LEVEL} vs CCE (paired two-sided t-test)\n"));
    }
    out
}

/// Writes `<stem>.json`, `<stem>.txt` and `<stem>.csv` into `dir`.
pub fn emit_report(report: &ExperimentReport, dir: &Path, stem: &str) -> Result<[PathBuf; 3]> {
    std::fs::create_dir_all(dir)?;
    let json = dir.join(format!("{stem}.json"));
    let txt = dir.join(format!("{stem}.txt"));
    let csv = dir.join(format!("{stem}.csv"));
    std::fs::write(&json, report.to_json()?)?;
    let mut table = render_table(std::slice::from_ref(report));
    table.push('\n');
    for d in &report.decisions {
        let _ = writeln!(table, "- {d}");
    }
    std::fs::write(&txt, table)?;
    std::fs::write(&csv, report.to_csv())?;
    Ok([json, txt, csv])
}

pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    ExperimentReport::from_json(&std::fs::read_to_string(path)?)
}
