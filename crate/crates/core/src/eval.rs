//! Prediction, macro-F1 and paired significance.

use serde::{Deserialize, Serialize};

use crate::encoder::TokenizedText;
use crate::error::{Error, Result};
use crate::numeric::{argmax, cosine_sim, softmax};
use crate::trainer::TrainedModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    #[default]
    DenseOnly,
    Blended,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub mode: InferenceMode,
    pub beta_inf: f64,
    /// With several proxies per class, blend with the best-matching one.
    #[serde(default)]
    pub max_over_k: bool,
}

impl InferenceConfig {
    pub fn dense() -> Self {
        Self {
            mode: InferenceMode::DenseOnly,
            beta_inf: 1.0,
            max_over_k: false,
        }
    }

    pub fn blended(beta_inf: f64) -> Self {
        Self {
            mode: InferenceMode::Blended,
            beta_inf,
            max_over_k: false,
        }
    }
}

/// Per-class scores for one representation. Dense mode returns the softmax of
/// the classifier logits; blended mode returns
/// `beta * softmax(logits)_c + (1 - beta) * cos(z, proxy_c)` without renormalising.
pub fn blended_scores(model: &TrainedModel, z: &[f64], cfg: &InferenceConfig) -> Result<Vec<f64>> {
    let probs = softmax(&model.encoder_params.classify_logits(z)?)?;
    if cfg.mode == InferenceMode::DenseOnly {
        return Ok(probs);
    }
    if !(0.0..=1.0).contains(&cfg.beta_inf) {
        return Err(Error::Config(format!("beta_inf must lie in [0, 1], got {}", cfg.beta_inf)));
    }
    let bank = model
        .proxy_bank
        .as_ref()
        .ok_or_else(|| Error::Config("blended inference needs a proxy bank".into()))?;
    let k = bank.proxies_per_class();
    if k > 1 && !cfg.max_over_k {
        return Err(Error::Config(format!(
            "blended inference with {k} proxies per class needs max-over-k"
        )));
    }
    let m = bank.matrix();
    let mut scores = Vec::with_capacity(probs.len());
    for (c, p) in probs.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for r in c * k..(c + 1) * k {
            best = best.max(cosine_sim(z, m.row(r))?);
        }
        scores.push(cfg.beta_inf * p + (1.0 - cfg.beta_inf) * best);
    }
    Ok(scores)
}

/// Predicted class for each text; ties go to the lowest class index.
pub fn predict(model: &TrainedModel, texts: &[TokenizedText], cfg: &InferenceConfig) -> Result<Vec<usize>> {
    texts
        .iter()
        .map(|t| {
            let z = model.encoder_params.encode(t)?;
            let s = blended_scores(model, &z, cfg)?;
            assert!(
                s.iter().all(|v| (-1.0..=2.0).contains(v)),
                "score outside [-1, 2]: {s:?}"
            );
            Ok(argmax(&s))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub macro_f1: f64,
    /// One entry per class; classes absent from both labels and predictions hold 0.
    pub per_class_f1: Vec<f64>,
    /// `confusion[label][prediction]`.
    pub confusion: Vec<Vec<u64>>,
    pub n_test: usize,
}

/// Macro-averaged F1 over the classes that occur among labels or predictions.
pub fn macro_f1(predictions: &[usize], labels: &[usize], classes: usize) -> Result<EvalResult> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::Label(format!("class pair ({l}, {p}) outside {classes} classes")));
        }
        confusion[l][p] += 1;
    }
    let mut per_class_f1 = vec![0.0; classes];
    let mut sum = 0.0;
    let mut counted = 0usize;
    for c in 0..classes {
        let tp = confusion[c][c] as f64;
        let actual: u64 = confusion[c].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
        if actual == 0 && predicted == 0 {
            continue;
        }
        let denom = (actual + predicted) as f64;
        per_class_f1[c] = 2.0 * tp / denom;
        sum += per_class_f1[c];
        counted += 1;
    }
    Ok(EvalResult {
        macro_f1: if counted == 0 { 0.0 } else { sum / counted as f64 },
        per_class_f1,
        confusion,
        n_test: labels.len(),
    })
}

/// Two-sided paired t-test on `a - b`. Returns the p-value.
pub fn paired_significance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Dimension(format!(
            "paired test needs two equal-length samples of at least 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().all(|&v| v == 0.0) {
        return Ok(1.0);
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(0.0);
    }
    let t = mean / (var.sqrt() / n.sqrt());
    let dof = n - 1.0;
    Ok(statrs::function::beta::beta_reg(dof / 2.0, 0.5, dof / (dof + t * t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderDims, EncoderParams};
    use crate::losses::{LossConfig, LossKind};
    use crate::numeric::{Mat, Rng};
    use crate::proxy_bank::ProxyBank;
    use crate::trainer::{TrainConfig, TrainingLog};

    fn model(bank: Option<ProxyBank>, classifier: Option<Mat>) -> TrainedModel {
        let dims = EncoderDims {
            vocab_buckets: 4,
            embed_dim: 2,
            repr_dim: 2,
        };
        let mut p = EncoderParams::zeros(dims, 2);
        if let Some(c) = classifier {
            p.classifier = c;
        }
        TrainedModel {
            encoder_params: p,
            proxy_bank: bank,
            loss_config: LossConfig::new(LossKind::ProxyAnchor),
            log: TrainingLog {
                steps: vec![],
                config: TrainConfig::default(),
            },
        }
    }

    fn unit_bank() -> ProxyBank {
        ProxyBank::from_matrix(Mat::from_rows(&[&[1.0, 0.0][..], &[0.0, 1.0]]).unwrap(), 2, 1).unwrap()
    }

    #[test]
    fn blend_arithmetic() {
        let m = model(Some(unit_bank()), None);
        let s = blended_scores(&m, &[1.0, 0.0], &InferenceConfig::blended(0.5)).unwrap();
        assert_eq!(s, vec![0.75, 0.25]);
        assert_eq!(argmax(&s), 0);
    }

    #[test]
    fn beta_zero_picks_matching_proxy() {
        let m = model(Some(unit_bank()), None);
        let s = blended_scores(&m, &[0.0, 0.7], &InferenceConfig::blended(0.0)).unwrap();
        assert_eq!(argmax(&s), 1);
    }

    #[test]
    fn beta_one_agrees_with_dense() {
        let c = Mat::from_rows(&[&[0.3, -0.8][..], &[1.1, 0.2]]).unwrap();
        let m = model(Some(unit_bank()), Some(c));
        let mut r = Rng::new(4);
        for _ in 0..200 {
            let z = [r.uniform() * 2.0 - 1.0, r.uniform() * 2.0 - 1.0];
            let a = blended_scores(&m, &z, &InferenceConfig::blended(1.0)).unwrap();
            let b = blended_scores(&m, &z, &InferenceConfig::dense()).unwrap();
            assert_eq!(argmax(&a), argmax(&b));
        }
    }

    #[test]
    fn blended_needs_single_proxy_bank() {
        let m = model(None, None);
        assert!(matches!(
            blended_scores(&m, &[1.0, 0.0], &InferenceConfig::blended(0.5)),
            Err(Error::Config(_))
        ));
        let two = ProxyBank::from_matrix(
            Mat::from_rows(&[&[1.0, 0.0][..], &[0.6, 0.8], &[0.0, 1.0], &[-1.0, 0.0]]).unwrap(),
            2,
            2,
        )
        .unwrap();
        let m = model(Some(two), None);
        let mut cfg = InferenceConfig::blended(0.0);
        assert!(matches!(blended_scores(&m, &[0.0, 1.0], &cfg), Err(Error::Config(_))));
        cfg.max_over_k = true;
        let s = blended_scores(&m, &[0.0, 1.0], &cfg).unwrap();
        assert!((s[0] - 0.8).abs() < 1e-15 && s[1] == 1.0);
    }

    #[test]
    fn f1_examples() {
        let r = macro_f1(&[0, 1, 1, 0], &[0, 1, 1, 0], 2).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        let r = macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert!((r.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class_f1[1], 0.0);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.confusion, vec![vec![2, 0], vec![2, 0]]);
        assert!(matches!(macro_f1(&[0], &[0, 1], 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn f1_skips_unseen_classes() {
        let r = macro_f1(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.per_class_f1.len(), 3);
        let r = macro_f1(&[2, 1], &[0, 1], 3).unwrap();
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ttest_edges() {
        let a: Vec<f64> = (0..40).map(|i| i as f64 * 0.01).collect();
        assert_eq!(paired_significance(&a, &a).unwrap(), 1.0);
        let b: Vec<f64> = a.iter().map(|x| x - 1.0).collect();
        assert_eq!(paired_significance(&a, &b).unwrap(), 0.0);
        assert!(paired_significance(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn ttest_reference_value() {
        // d = (1, 2, 3, 4): t = 3.872983, dof 3; reference p from scipy.stats.ttest_rel
        let p = paired_significance(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4]).unwrap();
        assert!((p - 0.030466291662170977).abs() < 1e-10, "{p}");
        let q = paired_significance(&[0.0; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(p, q);
    }
}
