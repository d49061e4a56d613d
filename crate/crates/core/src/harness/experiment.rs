//! Cross-validated grid search and the comparison against the cross-entropy baseline.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::folds::{Fold, FoldPlan, ShotSize};
use super::grid::{Axis, GridPoint, GridSpec, DESK_LEARNING_RATES, GRID_EPOCHS, SMALL_LEARNING_RATES};
use super::report::{is_significant, mean_std, ExperimentReport, ReportRow};
use crate::encoder::{tokenize, TokenizedText};
use crate::error::{Error, Result};
use crate::eval::{macro_f1, paired_significance, predict, InferenceConfig};
use crate::losses::LossKind;
use crate::numeric::derive_seed;
use crate::trainer::{train, TrainConfig, TrainedModel, TrainingSet};

const RUN_STREAM: u64 = 0x7A1E;

/// Training seed of every model on `fold`, shared by all losses and grid points.
pub fn run_seed(master_seed: u64, fold: usize) -> u64 {
    derive_seed(master_seed, &[RUN_STREAM, fold as u64])
}

/// Epoch count used for the baseline when epochs are not searched.
pub fn default_epochs(shot: ShotSize) -> usize {
    match shot {
        ShotSize::Count(n) if n <= 20 => 128,
        ShotSize::Count(n) if n <= 100 => 64,
        _ => 8,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub base: TrainConfig,
    /// Metric-learning losses compared against the baseline.
    pub losses: Vec<LossKind>,
    pub full_grid: bool,
    pub small_learning_rates: bool,
    pub beta_inf: f64,
    pub max_over_k: bool,
    /// Worker threads; 0 picks the number of cores.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            base: TrainConfig::default(),
            losses: LossKind::DML.to_vec(),
            full_grid: false,
            small_learning_rates: false,
            beta_inf: 0.5,
            max_over_k: false,
            workers: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn baseline_grid(&self) -> GridSpec {
        let lrs: &[f64] = if self.small_learning_rates {
            &SMALL_LEARNING_RATES
        } else {
            &DESK_LEARNING_RATES
        };
        let mut g = GridSpec::desk(LossKind::Cce, &self.base);
        g.axes = vec![Axis::new("learning_rate", lrs)];
        if self.full_grid {
            g.axes.push(Axis::new("epochs", &GRID_EPOCHS));
        }
        g
    }

    pub fn loss_grid(&self, loss: LossKind, base: &TrainConfig) -> GridSpec {
        if self.full_grid {
            GridSpec::full(loss, base)
        } else {
            GridSpec::desk(loss, base)
        }
    }

    pub fn decisions(&self) -> Vec<String> {
        let b = &self.base;
        vec![
            "score: macro-F1 over classes seen in labels or predictions".into(),
            "folds: independent seeded 80/20 train/test splits".into(),
            "few-shot sampling: stratified, largest-remainder quotas".into(),
            format!(
                "optimizer: AdamW b1=0.9 b2=0.999 eps=1e-8 weight_decay={} warmup={} clip_norm={}",
                b.weight_decay, b.warmup_fraction, b.clip_norm
            ),
            format!("batch_size={}", b.batch_size),
            format!(
                "learning rates: {}",
                if self.small_learning_rates { "1e-5/2e-5/3e-5" } else { "desk 1e-3/3e-3/1e-2" }
            ),
            format!("grid: {}", if self.full_grid { "full" } else { "desk subsample" }),
            "baseline lr/epochs reused by every metric-learning grid".into(),
            "significance: paired two-sided t-test vs CCE, star when p < 0.05".into(),
            format!("inf rows: blended inference with beta_inf={}", self.beta_inf),
            format!(
                "multi-proxy inf: {}",
                if self.max_over_k { "max-over-k cosine" } else { "dense-only" }
            ),
            format!(
                "proxy normalisation: proxynca={} softtriple={} proxyanchor=true (unit rows after every update)",
                b.loss.proxynca_normalize, b.loss.softtriple_normalize
            ),
            format!(
                "encoder: V={} d_emb={} d={}",
                b.encoder.vocab_buckets, b.encoder.embed_dim, b.encoder.repr_dim
            ),
        ]
    }
}

/// Test-set scores of one trained model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldScore {
    pub dense: f64,
    pub blended: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PointOutcome {
    pub point: GridPoint,
    /// One entry per fold, present unless the point failed.
    pub scores: Option<Vec<FoldScore>>,
    pub failure: Option<String>,
}

impl PointOutcome {
    pub fn dense(&self) -> Option<Vec<f64>> {
        self.scores.as_ref().map(|s| s.iter().map(|f| f.dense).collect())
    }

    pub fn blended(&self) -> Option<Vec<f64>> {
        self.scores.as_ref()?.iter().map(|f| f.blended).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub loss: LossKind,
    pub points: Vec<PointOutcome>,
}

fn best_by(points: &[PointOutcome], pick: impl Fn(&PointOutcome) -> Option<Vec<f64>>) -> Option<(usize, Vec<f64>)> {
    let mut best: Option<(usize, Vec<f64>, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        if let Some(s) = pick(p) {
            let m = mean_std(&s).0;
            if best.as_ref().is_none_or(|b| m > b.2) {
                best = Some((i, s, m));
            }
        }
    }
    best.map(|(i, s, _)| (i, s))
}

impl GridOutcome {
    /// Index and per-fold dense scores of the best point; ties go to the lower id.
    pub fn best_dense(&self) -> Option<(usize, Vec<f64>)> {
        best_by(&self.points, PointOutcome::dense)
    }

    pub fn best_blended(&self) -> Option<(usize, Vec<f64>)> {
        best_by(&self.points, PointOutcome::blended)
    }

    pub fn failed(&self) -> usize {
        self.points.iter().filter(|p| p.scores.is_none()).count()
    }
}

/// Tokenized dataset shared read-only by every run.
pub struct Prepared<'a> {
    pub dataset: &'a Dataset,
    pub tokens: Vec<TokenizedText>,
    pub labels: Vec<usize>,
}

impl<'a> Prepared<'a> {
    pub fn new(dataset: &'a Dataset, buckets: usize) -> Self {
        Self {
            dataset,
            tokens: dataset.examples.iter().map(|e| tokenize(&e.text, buckets)).collect(),
            labels: dataset.labels(),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Result<TrainingSet> {
        TrainingSet::new(
            idx.iter().map(|&i| self.tokens[i].clone()).collect(),
            idx.iter().map(|&i| self.labels[i]).collect(),
            self.dataset.classes,
        )
    }

    /// Trains on the fold's few-shot sample with the fold's seed.
    pub fn train_fold(&self, plan: &FoldPlan, fold_id: usize, config: &TrainConfig) -> Result<TrainedModel> {
        let mut cfg = config.clone();
        cfg.seed = run_seed(plan.master_seed, fold_id);
        train(&self.subset(&plan.folds[fold_id].fewshot)?, &cfg)
    }

    pub fn evaluate(&self, model: &TrainedModel, fold: &Fold, inference: &InferenceConfig) -> Result<f64> {
        let texts: Vec<TokenizedText> = fold.test.iter().map(|&i| self.tokens[i].clone()).collect();
        let labels: Vec<usize> = fold.test.iter().map(|&i| self.labels[i]).collect();
        let preds = predict(model, &texts, inference)?;
        Ok(macro_f1(&preds, &labels, self.dataset.classes)?.macro_f1)
    }
}

/// How the "+ inf" score of a proxy-trained model is obtained.
pub fn blended_config(model: &TrainedModel, beta_inf: f64, max_over_k: bool) -> InferenceConfig {
    let k = model.proxy_bank.as_ref().map_or(1, |b| b.proxies_per_class());
    if k > 1 && !max_over_k {
        InferenceConfig::dense()
    } else {
        InferenceConfig {
            max_over_k,
            ..InferenceConfig::blended(beta_inf)
        }
    }
}

fn run_job(prep: &Prepared, plan: &FoldPlan, point: &GridPoint, fold_id: usize, cfg: &ExperimentConfig) -> Result<FoldScore> {
    let model = prep.train_fold(plan, fold_id, &point.config)?;
    let fold = &plan.folds[fold_id];
    let dense = prep.evaluate(&model, fold, &InferenceConfig::dense())?;
    let blended = if model.proxy_bank.is_some() {
        Some(prep.evaluate(&model, fold, &blended_config(&model, cfg.beta_inf, cfg.max_over_k))?)
    } else {
        None
    };
    Ok(FoldScore { dense, blended })
}

/// Trains and evaluates every grid point on every fold. Jobs run on a pool of
/// `cfg.workers` threads; results are keyed by (point, fold).
pub fn run_grid(prep: &Prepared, plan: &FoldPlan, grid: &GridSpec, cfg: &ExperimentConfig) -> Result<GridOutcome> {
    let points = grid.points()?;
    if points.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..plan.folds.len()).map(move |f| (p, f)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: BTreeMap<(usize, usize), Result<FoldScore>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, f)| ((p, f), run_job(prep, plan, &points[p], f, cfg)))
            .collect()
    });
    let mut by_point: Vec<Vec<Result<FoldScore>>> = points.iter().map(|_| Vec::new()).collect();
    for ((p, _), r) in results {
        by_point[p].push(r);
    }
    let points = points
        .into_iter()
        .zip(by_point)
        .map(|(point, rs)| match rs.into_iter().collect::<Result<Vec<_>>>() {
            Ok(scores) => PointOutcome {
                point,
                scores: Some(scores),
                failure: None,
            },
            Err(e) => PointOutcome {
                point,
                scores: None,
                failure: Some(e.to_string()),
            },
        })
        .collect();
    Ok(GridOutcome { loss: grid.loss, points })
}

fn row(
    label: String,
    loss: LossKind,
    inference: &str,
    outcome: &GridOutcome,
    idx: usize,
    scores: Vec<f64>,
    baseline: Option<&[f64]>,
) -> Result<ReportRow> {
    let (mean, std) = mean_std(&scores);
    let p_value = match baseline {
        Some(b) => Some(paired_significance(&scores, b)?),
        None => None,
    };
    Ok(ReportRow {
        label,
        loss,
        inference: inference.into(),
        hyperparameters: outcome.points[idx].point.values.clone(),
        mean,
        std,
        per_fold: scores,
        p_value,
        starred: is_significant(p_value),
        grid_points: outcome.points.len(),
        failed_points: outcome.failed(),
    })
}

fn failures(outcome: &GridOutcome) -> Vec<String> {
    outcome
        .points
        .iter()
        .filter_map(|p| p.failure.as_ref().map(|f| format!("{} point {} {:?}: {f}", outcome.loss, p.point.id, p.point.values)))
        .collect()
}

/// Baseline grid first; its best learning rate and epoch count then seed every loss grid.
pub fn run_experiment(dataset: &Dataset, plan: &FoldPlan, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if plan.n_folds < 2 {
        return Err(Error::Config("significance testing needs at least 2 folds".into()));
    }
    let prep = Prepared::new(dataset, cfg.base.encoder.vocab_buckets);
    let baseline = run_grid(&prep, plan, &cfg.baseline_grid(), cfg)?;
    let mut all_failures = failures(&baseline);
    let (b_idx, b_scores) = baseline
        .best_dense()
        .ok_or_else(|| Error::Config(format!("every baseline grid point failed: {all_failures:?}")))?;
    let best_base = baseline.points[b_idx].point.config.clone();
    let mut rows = vec![row("CCE".into(), LossKind::Cce, "dense", &baseline, b_idx, b_scores.clone(), None)?];

    for &loss in &cfg.losses {
        if loss == LossKind::Cce {
            continue;
        }
        let mut base = cfg.base.clone();
        base.learning_rate = best_base.learning_rate;
        base.epochs = best_base.epochs;
        let outcome = run_grid(&prep, plan, &cfg.loss_grid(loss, &base), cfg)?;
        all_failures.extend(failures(&outcome));
        let name = loss.display_name();
        if let Some((i, s)) = outcome.best_dense() {
            rows.push(row(format!("CCE + {name}"), loss, "dense", &outcome, i, s, Some(&b_scores))?);
        }
        if let Some((i, s)) = outcome.best_blended() {
            let k = outcome.points[i].point.config.loss.proxy_layout().map_or(1, |l| l.per_class);
            let mode = if k > 1 && !cfg.max_over_k { "dense-only" } else { "blended" };
            rows.push(row(format!("CCE + {name} + inf"), loss, mode, &outcome, i, s, Some(&b_scores))?);
        }
    }
    Ok(ExperimentReport {
        dataset: dataset.name.clone(),
        classes: dataset.classes,
        shot_size: plan.shot_size,
        n_folds: plan.n_folds,
        master_seed: plan.master_seed,
        rows,
        failures: all_failures,
        decisions: cfg.decisions(),
    })
}
