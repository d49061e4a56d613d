use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::numeric::{dot, lse_unchecked, softplus, Mat, Rng};
use crate::proxy_bank::{present_classes, ProxyBank};

use super::normalize::RowNormalized;
use super::{check_bank, require_proxies, DmlLoss, EmbeddingBatch, LossKind, LossOutput, ProxyLayout};

/// `log(1 + sum_j exp(x_j))` and the weights `d/dx_j` of that quantity.
fn soft_term(xs: &[f64]) -> (f64, Vec<f64>) {
    let t = softplus(lse_unchecked(xs));
    (t, xs.iter().map(|x| (x - t).exp()).collect())
}

/// Proxy-Anchor loss with cosine similarity.
///
/// The positive term averages over proxies of classes present in the batch,
/// the negative term over every proxy. For a class absent from the batch the
/// whole batch acts as its negative set.
pub fn proxyanchor_loss(
    batch: &EmbeddingBatch,
    proxies: &ProxyBank,
    alpha: f64,
    delta: f64,
) -> Result<LossOutput> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
    }
    check_bank(batch, proxies, Some(1))?;
    let zn = RowNormalized::new(batch.embeddings(), "embedding")?;
    let pn = RowNormalized::new(proxies.matrix(), "proxy")?;
    let (z, p) = (&zn.unit, &pn.unit);
    let labels = batch.labels();
    let classes = proxies.classes();
    let present: BTreeSet<usize> = present_classes(labels);

    // sims[i][c] = cos(z_i, p_c)
    let sims: Vec<Vec<f64>> = (0..batch.len())
        .map(|i| (0..classes).map(|c| dot(z.row(i), p.row(c))).collect())
        .collect();
    // ds[i][c] accumulates dL/d sims[i][c]
    let mut ds = vec![vec![0.0; classes]; batch.len()];

    let mut pos_value = 0.0;
    let inv_pos = 1.0 / present.len() as f64;
    for &c in &present {
        let members: Vec<usize> = (0..batch.len()).filter(|&i| labels[i] == c).collect();
        let xs: Vec<f64> = members.iter().map(|&i| -alpha * (sims[i][c] - delta)).collect();
        let (t, w) = soft_term(&xs);
        pos_value += t;
        for (&i, wj) in members.iter().zip(w) {
            ds[i][c] -= alpha * wj * inv_pos;
        }
    }

    let mut neg_value = 0.0;
    let inv_all = 1.0 / classes as f64;
    for c in 0..classes {
        let others: Vec<usize> = (0..batch.len()).filter(|&i| labels[i] != c).collect();
        if others.is_empty() {
            continue;
        }
        let xs: Vec<f64> = others.iter().map(|&i| alpha * (sims[i][c] + delta)).collect();
        let (t, w) = soft_term(&xs);
        neg_value += t;
        for (&i, wj) in others.iter().zip(w) {
            ds[i][c] += alpha * wj * inv_all;
        }
    }

    let mut gz = Mat::zeros(z.rows(), z.cols());
    let mut gp = Mat::zeros(p.rows(), p.cols());
    for (i, row) in ds.iter().enumerate() {
        for (c, &g) in row.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for d in 0..z.cols() {
                let (zd, pd) = (z.get(i, d), p.get(c, d));
                gz.row_mut(i)[d] += g * pd;
                gp.row_mut(c)[d] += g * zd;
            }
        }
    }
    Ok(LossOutput {
        value: pos_value * inv_pos + neg_value * inv_all,
        grad_embeddings: zn.backward(gz),
        grad_proxies: Some(pn.backward(gp)),
    })
}

#[derive(Debug, Clone)]
pub struct ProxyAnchor {
    pub alpha: f64,
    pub delta: f64,
}

impl DmlLoss for ProxyAnchor {
    fn kind(&self) -> LossKind {
        LossKind::ProxyAnchor
    }

    fn proxy_layout(&self) -> Option<ProxyLayout> {
        Some(ProxyLayout {
            per_class: 1,
            renormalize: true,
        })
    }

    fn evaluate(&self, batch: &EmbeddingBatch, proxies: Option<&ProxyBank>, _: &mut Rng) -> Result<LossOutput> {
        proxyanchor_loss(batch, require_proxies(self.kind(), proxies)?, self.alpha, self.delta)
    }
}
