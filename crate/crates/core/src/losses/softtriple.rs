use crate::error::{Error, Result};
use crate::numeric::{dot, lse_unchecked, softmax_unchecked, Mat, Rng};
use crate::proxy_bank::ProxyBank;

use super::normalize::RowNormalized;
use super::{check_bank, require_proxies, DmlLoss, EmbeddingBatch, LossKind, LossOutput, ProxyLayout};

/// SoftTriple loss over `K` proxies per class.
///
/// The relaxed class similarity is the softmax(`u / gamma`)-weighted mean of
/// the per-proxy inner products `u_k = z . w_c^k`. Class logits are
/// `lambda * (S_c - delta * [c == y])` and the value is the mean
/// cross-entropy of those logits.
pub fn softtriple_loss(
    batch: &EmbeddingBatch,
    proxies: &ProxyBank,
    lambda: f64,
    gamma: f64,
    delta: f64,
    normalize: bool,
) -> Result<LossOutput> {
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be > 0, got {gamma}")));
    }
    check_bank(batch, proxies, None)?;
    let (zn, wn) = if normalize {
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
    let (z, w) = (&zn.unit, &wn.unit);
    let classes = proxies.classes();
    let k_per = proxies.proxies_per_class();
    let inv_n = 1.0 / batch.len() as f64;

    let mut gz = Mat::zeros(z.rows(), z.cols());
    let mut gw = Mat::zeros(w.rows(), w.cols());
    let mut value = 0.0;
    for (i, &y) in batch.labels().iter().enumerate() {
        let zi = z.row(i);
        let mut inner = Vec::with_capacity(classes);
        let mut weights = Vec::with_capacity(classes);
        let mut relaxed = Vec::with_capacity(classes);
        for c in 0..classes {
            let u: Vec<f64> = (0..k_per).map(|k| dot(zi, w.row(c * k_per + k))).collect();
            let scaled: Vec<f64> = u.iter().map(|v| v / gamma).collect();
            let q = softmax_unchecked(&scaled);
            relaxed.push(q.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>());
            inner.push(u);
            weights.push(q);
        }
        let logits: Vec<f64> = relaxed
            .iter()
            .enumerate()
            .map(|(c, &s)| lambda * if c == y { s - delta } else { s })
            .collect();
        let lse = lse_unchecked(&logits);
        value += lse - logits[y];

        for c in 0..classes {
            let dt = (logits[c] - lse).exp() - if c == y { 1.0 } else { 0.0 };
            let ds = lambda * dt * inv_n;
            if ds == 0.0 {
                continue;
            }
            for k in 0..k_per {
                let (u, q) = (inner[c][k], weights[c][k]);
                let du = ds * q * (1.0 + (u - relaxed[c]) / gamma);
                let row = c * k_per + k;
                for d in 0..z.cols() {
                    let (zd, wd) = (z.get(i, d), w.get(row, d));
                    gz.row_mut(i)[d] += du * wd;
                    gw.row_mut(row)[d] += du * zd;
                }
            }
        }
    }
    Ok(LossOutput {
        value: value * inv_n,
        grad_embeddings: zn.backward(gz),
        grad_proxies: Some(wn.backward(gw)),
    })
}

#[derive(Debug, Clone)]
pub struct SoftTriple {
    pub lambda: f64,
    pub gamma: f64,
    pub delta: f64,
    pub proxies_per_class: usize,
    pub normalize: bool,
}

impl DmlLoss for SoftTriple {
    fn kind(&self) -> LossKind {
        LossKind::SoftTriple
    }

    fn proxy_layout(&self) -> Option<ProxyLayout> {
        Some(ProxyLayout {
            per_class: self.proxies_per_class,
            renormalize: self.normalize,
        })
    }

    fn evaluate(&self, batch: &EmbeddingBatch, proxies: Option<&ProxyBank>, _: &mut Rng) -> Result<LossOutput> {
        softtriple_loss(
            batch,
            require_proxies(self.kind(), proxies)?,
            self.lambda,
            self.gamma,
            self.delta,
            self.normalize,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_proxy_reduction() {
        let b = EmbeddingBatch::from_rows(&[[1.0, 0.0]], &[0], 2).unwrap();
        let bank = ProxyBank::from_matrix(Mat::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(), 2, 1).unwrap();
        let v = softtriple_loss(&b, &bank, 1.0, 0.1, 0.0, true).unwrap().value;
        let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn equal_similarities_give_ln_c() {
        // every proxy is orthogonal to z, so all relaxed similarities are 0
        let b = EmbeddingBatch::from_rows(&[[0.0, 0.0, 1.0]], &[1], 3).unwrap();
        let bank = ProxyBank::from_matrix(
            Mat::from_rows(&[
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [1.0, 1.0, 0.0],
                [1.0, -1.0, 0.0],
                [-1.0, 0.0, 0.0],
                [0.0, -1.0, 0.0],
            ])
            .unwrap(),
            3,
            2,
        )
        .unwrap();
        let v = softtriple_loss(&b, &bank, 4.0, 0.05, 0.0, true).unwrap().value;
        assert!((v - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gamma_must_be_positive() {
        let b = EmbeddingBatch::from_rows(&[[1.0, 0.0]], &[0], 2).unwrap();
        let bank = ProxyBank::from_matrix(Mat::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(), 2, 1).unwrap();
        assert!(matches!(
            softtriple_loss(&b, &bank, 1.0, 0.0, 0.0, true),
            Err(Error::Config(_))
        ));
    }
}
