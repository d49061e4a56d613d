use crate::error::{Error, Result};
use crate::numeric::{lse_unchecked, sq_dist, Mat, Rng};
use crate::proxy_bank::ProxyBank;

use super::normalize::RowNormalized;
use super::{check_bank, require_proxies, DmlLoss, EmbeddingBatch, LossKind, LossOutput, ProxyLayout};

/// ProxyNCA with a scaled Euclidean distance.
///
/// `-1/N sum_i log( exp(-s d(z_i, p_{y_i})) / sum_{j != y_i} exp(-s d(z_i, p_j)) )`
///
/// The positive proxy is absent from the denominator, so the value can be
/// negative. With `normalize` set, embeddings and proxies are projected onto
/// the unit sphere first and gradients flow back through the projection.
pub fn proxynca_loss(
    batch: &EmbeddingBatch,
    proxies: &ProxyBank,
    scale: f64,
    normalize: bool,
) -> Result<LossOutput> {
    if !(scale > 0.0) {
        return Err(Error::Config(format!("softmax scale must be > 0, got {scale}")));
    }
    check_bank(batch, proxies, Some(1))?;
    let classes = proxies.classes();
    if classes < 2 {
        return Err(Error::DegenerateBatch(
            "ProxyNCA needs at least two classes for a non-empty denominator".into(),
        ));
    }
    let (zn, pn) = if normalize {
        (
            RowNormalized::new(batch.embeddings(), "embedding")?,
            RowNormalized::new(proxies.matrix(), "proxy")?,
        )
    } else {
        (
            RowNormalized::identity(batch.embeddings()),
            RowNormalized::identity(proxies.matrix()),
        )
    };
    let (z, p) = (&zn.unit, &pn.unit);
    let n = batch.len();
    let inv_n = 1.0 / n as f64;

    let mut gz = Mat::zeros(z.rows(), z.cols());
    let mut gp = Mat::zeros(p.rows(), p.cols());
    let mut value = 0.0;
    for (i, &y) in batch.labels().iter().enumerate() {
        let dists: Vec<f64> = (0..classes).map(|c| sq_dist(z.row(i), p.row(c)).sqrt()).collect();
        let neg: Vec<usize> = (0..classes).filter(|&c| c != y).collect();
        let exps: Vec<f64> = neg.iter().map(|&c| -scale * dists[c]).collect();
        let lse = lse_unchecked(&exps);
        value += scale * dists[y] + lse;

        // coefficient on each distance
        let mut coef = vec![0.0; classes];
        coef[y] = scale * inv_n;
        for (k, &c) in neg.iter().enumerate() {
            coef[c] = -scale * (exps[k] - lse).exp() * inv_n;
        }
        for c in 0..classes {
            let d = dists[c];
            if d == 0.0 || coef[c] == 0.0 {
                continue;
            }
            let g = coef[c] / d;
            for k in 0..z.cols() {
                let diff = z.get(i, k) - p.get(c, k);
                gz.row_mut(i)[k] += g * diff;
                gp.row_mut(c)[k] -= g * diff;
            }
        }
    }
    Ok(LossOutput {
        value: value * inv_n,
        grad_embeddings: zn.backward(gz),
        grad_proxies: Some(pn.backward(gp)),
    })
}

#[derive(Debug, Clone)]
pub struct ProxyNca {
    pub scale: f64,
    pub normalize: bool,
}

impl DmlLoss for ProxyNca {
    fn kind(&self) -> LossKind {
        LossKind::ProxyNca
    }

    fn proxy_layout(&self) -> Option<ProxyLayout> {
        Some(ProxyLayout {
            per_class: 1,
            renormalize: self.normalize,
        })
    }

    fn evaluate(&self, batch: &EmbeddingBatch, proxies: Option<&ProxyBank>, _: &mut Rng) -> Result<LossOutput> {
        proxynca_loss(batch, require_proxies(self.kind(), proxies)?, self.scale, self.normalize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (EmbeddingBatch, ProxyBank) {
        let b = EmbeddingBatch::from_rows(&[[0.0, 0.0]], &[0], 2).unwrap();
        let bank = ProxyBank::from_matrix(Mat::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap(), 2, 1).unwrap();
        (b, bank)
    }

    #[test]
    fn hand_value() {
        let (b, bank) = setup();
        let v = proxynca_loss(&b, &bank, 1.0, false).unwrap().value;
        assert!((v + 5.0).abs() < 1e-12);
        let v2 = proxynca_loss(&b, &bank, 2.0, false).unwrap().value;
        assert!((v2 + 10.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_degenerate() {
        let b = EmbeddingBatch::from_rows(&[[0.0, 1.0]], &[0], 1).unwrap();
        let bank = ProxyBank::from_matrix(Mat::from_rows(&[[1.0, 0.0]]).unwrap(), 1, 1).unwrap();
        assert!(matches!(
            proxynca_loss(&b, &bank, 1.0, true),
            Err(Error::DegenerateBatch(_))
        ));
    }

    #[test]
    fn normalized_zero_vector_rejected() {
        let (b, bank) = setup();
        assert!(matches!(
            proxynca_loss(&b, &bank, 1.0, true),
            Err(Error::DegenerateVector(_))
        ));
    }
}
