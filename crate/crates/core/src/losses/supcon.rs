use crate::error::{Error, Result};
use crate::numeric::{dot, lse_unchecked, Mat, Rng};
use crate::proxy_bank::ProxyBank;

use super::{DmlLoss, EmbeddingBatch, LossKind, LossOutput};

/// Supervised contrastive loss, summed over anchors.
///
/// Anchors without a same-class partner contribute zero. Similarities are raw
/// dot products divided by `temperature`; the contrast set of anchor `i` is
/// every other row of the batch.
pub fn supcon_loss(batch: &EmbeddingBatch, temperature: f64) -> Result<LossOutput> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
    }
    let z = batch.embeddings();
    let labels = batch.labels();
    let n = labels.len();
    let mut grad = Mat::zeros(z.rows(), z.cols());
    let mut value = 0.0;
    let mut contributing = 0usize;

    for i in 0..n {
        let positives = (0..n).filter(|&p| p != i && labels[p] == labels[i]).count();
        if positives == 0 {
            continue;
        }
        contributing += 1;
        let zi = z.row(i);
        let others: Vec<usize> = (0..n).filter(|&k| k != i).collect();
        let scaled: Vec<f64> = others.iter().map(|&k| dot(zi, z.row(k)) / temperature).collect();
        let lse = lse_unchecked(&scaled);
        let inv_p = 1.0 / positives as f64;
        let pos_sum: f64 = others
            .iter()
            .zip(&scaled)
            .filter(|(&k, _)| labels[k] == labels[i])
            .map(|(_, s)| s)
            .sum();
        value += lse - inv_p * pos_sum;

        for (&k, &s) in others.iter().zip(&scaled) {
            let target = if labels[k] == labels[i] { inv_p } else { 0.0 };
            let g = ((s - lse).exp() - target) / temperature;
            if g == 0.0 {
                continue;
            }
            for d in 0..z.cols() {
                let (zid, zkd) = (z.get(i, d), z.get(k, d));
                grad.row_mut(i)[d] += g * zkd;
                grad.row_mut(k)[d] += g * zid;
            }
        }
    }
    if contributing == 0 {
        return Err(Error::DegenerateBatch(
            "no anchor has a same-class partner in the batch".into(),
        ));
    }
    Ok(LossOutput {
        value,
        grad_embeddings: grad,
        grad_proxies: None,
    })
}

#[derive(Debug, Clone)]
pub struct SupCon {
    pub temperature: f64,
}

impl DmlLoss for SupCon {
    fn kind(&self) -> LossKind {
        LossKind::SupCon
    }

    fn evaluate(&self, batch: &EmbeddingBatch, _: Option<&ProxyBank>, _: &mut Rng) -> Result<LossOutput> {
        supcon_loss(batch, self.temperature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_same_class_is_zero() {
        let b = EmbeddingBatch::from_rows(&[[0.4, -1.0], [2.0, 0.5]], &[1, 1], 2).unwrap();
        let out = supcon_loss(&b, 0.3).unwrap();
        assert!(out.value.abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let b = EmbeddingBatch::from_rows(&[[0.4, -1.0], [2.0, 0.5]], &[0, 1], 2).unwrap();
        assert!(matches!(supcon_loss(&b, 0.5), Err(Error::DegenerateBatch(_))));
        assert!(matches!(supcon_loss(&b, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn singleton_anchor_contributes_nothing() {
        let pair = EmbeddingBatch::from_rows(&[[1.0, 0.0], [0.9, 0.1]], &[0, 0], 2).unwrap();
        let with_extra =
            EmbeddingBatch::from_rows(&[[1.0, 0.0], [0.9, 0.1], [-5.0, 0.0]], &[0, 0, 1], 2).unwrap();
        let a = supcon_loss(&pair, 0.5).unwrap().value;
        let b = supcon_loss(&with_extra, 0.5).unwrap().value;
        // the singleton only enters as a (far) negative, so the loss barely moves
        assert!(b >= a && b - a < 1e-4);
    }
}
