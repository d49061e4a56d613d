use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::numeric::{dot, lse_unchecked, Mat, Rng};
use crate::proxy_bank::ProxyBank;

use super::{mine_pairs, DmlLoss, EmbeddingBatch, LossKind, LossOutput};

/// An anchor and its single positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pair {
    pub anchor: usize,
    pub positive: usize,
}

impl Pair {
    pub fn new(anchor: usize, positive: usize) -> Self {
        Self { anchor, positive }
    }
}

/// Multi-class N-pair loss with dot-product similarity.
///
/// For each pair the negatives are every batch row whose label differs from
/// the anchor's. The value is the mean over pairs of
/// `-log(exp(a.p) / (exp(a.p) + sum_n exp(a.n)))`.
pub fn npairs_loss(batch: &EmbeddingBatch, pairs: &[Pair]) -> Result<LossOutput> {
    if pairs.is_empty() {
        return Err(Error::Pairing("no anchor has a positive in the batch".into()));
    }
    let labels = batch.labels();
    let n = labels.len();
    let mut anchors = HashSet::new();
    for p in pairs {
        if p.anchor >= n || p.positive >= n {
            return Err(Error::Pairing(format!("pair {p:?} indexes outside the batch")));
        }
        if p.anchor == p.positive {
            return Err(Error::Pairing(format!("anchor {} is paired with itself", p.anchor)));
        }
        if labels[p.anchor] != labels[p.positive] {
            return Err(Error::Pairing(format!(
                "anchor {} and positive {} have different labels",
                p.anchor, p.positive
            )));
        }
        if !anchors.insert(p.anchor) {
            return Err(Error::Pairing(format!("anchor {} has multiple positives", p.anchor)));
        }
    }

    let z = batch.embeddings();
    let mut grad = Mat::zeros(z.rows(), z.cols());
    let inv = 1.0 / pairs.len() as f64;
    let mut value = 0.0;
    for pair in pairs {
        let a = z.row(pair.anchor);
        let negatives: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[pair.anchor]).collect();
        // scores[0] is the positive
        let mut scores = Vec::with_capacity(negatives.len() + 1);
        scores.push(dot(a, z.row(pair.positive)));
        scores.extend(negatives.iter().map(|&j| dot(a, z.row(j))));
        let lse = lse_unchecked(&scores);
        value += lse - scores[0];

        let others: Vec<usize> = std::iter::once(pair.positive).chain(negatives).collect();
        for (k, &j) in others.iter().enumerate() {
            let w = (scores[k] - lse).exp();
            let g = inv * if k == 0 { w - 1.0 } else { w };
            if g == 0.0 {
                continue;
            }
            let zj = z.row(j).to_vec();
            for (d, v) in zj.iter().enumerate() {
                grad.row_mut(pair.anchor)[d] += g * v;
            }
            for d in 0..z.cols() {
                grad.row_mut(j)[d] += g * a[d];
            }
        }
    }
    Ok(LossOutput {
        value: value * inv,
        grad_embeddings: grad,
        grad_proxies: None,
    })
}

#[derive(Debug, Clone)]
pub struct NPairs {
    pub cap: usize,
}

impl DmlLoss for NPairs {
    fn kind(&self) -> LossKind {
        LossKind::NPairs
    }

    fn evaluate(&self, batch: &EmbeddingBatch, _: Option<&ProxyBank>, rng: &mut Rng) -> Result<LossOutput> {
        let pairs = mine_pairs(batch.labels(), self.cap, rng);
        npairs_loss(batch, &pairs)
    }
}
