//! Datasets, fold plans, grid search and reports.

pub mod dataset;
pub mod experiment;
pub mod folds;
pub mod grid;
pub mod report;
pub mod synth;

pub use dataset::{load_dataset, Dataset, Example};
pub use experiment::{default_epochs, run_experiment, run_grid, run_seed, ExperimentConfig, GridOutcome, Prepared};
pub use folds::{make_fold_plan, Fold, FoldPlan, ShotSize};
pub use grid::{GridPoint, GridSpec};
pub use report::{emit_report, format_cell, load_report, render_table, ExperimentReport, ReportRow};
pub use synth::{synth_dataset, SynthSpec};
