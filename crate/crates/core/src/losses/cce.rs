use crate::error::{Error, Result};
use crate::numeric::{check_finite, softmax_unchecked, Mat};

use super::LossOutput;

/// Probabilities are clamped here before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Categorical cross-entropy of softmax outputs.
///
/// `probs` holds one probability row per observation. The returned gradient
/// is taken w.r.t. the pre-softmax logits: `(probs - onehot) / N`.
pub fn cce_loss(probs: &Mat, labels: &[usize]) -> Result<LossOutput> {
    let (n, classes) = probs.shape();
    if n == 0 || classes == 0 {
        return Err(Error::Dimension("cross-entropy of an empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} rows", labels.len())));
    }
    check_finite(probs.as_slice(), "cce_loss")?;
    for (i, row) in probs.iter_rows().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Dimension(format!(
                "probability row {i} sums to {s}, expected 1"
            )));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Label(format!("label {bad} out of range for {classes} classes")));
    }

    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        value -= probs.get(i, y).max(PROB_FLOOR).ln();
        let row = grad.row_mut(i);
        row[y] -= 1.0;
        row.iter_mut().for_each(|g| *g *= inv_n);
    }
    Ok(LossOutput {
        value: value * inv_n,
        grad_embeddings: grad,
        grad_proxies: None,
    })
}

/// Softmax each logit row, then [`cce_loss`].
pub fn cce_from_logits(logits: &Mat, labels: &[usize]) -> Result<LossOutput> {
    check_finite(logits.as_slice(), "cce_from_logits")?;
    let mut probs = logits.clone();
    for i in 0..logits.rows() {
        let p = softmax_unchecked(logits.row(i));
        probs.row_mut(i).copy_from_slice(&p);
    }
    cce_loss(&probs, labels)
}
