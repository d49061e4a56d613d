use crate::error::{Error, Result};
use crate::numeric::{sq_dist, Mat, Rng};
use crate::proxy_bank::ProxyBank;

use super::{mine_triplets, DmlLoss, EmbeddingBatch, LossKind, LossOutput};

/// Indices of an (anchor, positive, negative) triple within a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

impl Triplet {
    pub fn new(anchor: usize, positive: usize, negative: usize) -> Self {
        Self {
            anchor,
            positive,
            negative,
        }
    }

    fn validate(&self, labels: &[usize]) -> Result<()> {
        let bad = |reason: &str| Error::InvalidTriplet {
            anchor: self.anchor,
            positive: self.positive,
            negative: self.negative,
            reason: reason.to_string(),
        };
        let n = labels.len();
        if self.anchor >= n || self.positive >= n || self.negative >= n {
            return Err(bad("index outside the batch"));
        }
        if self.anchor == self.positive || self.anchor == self.negative || self.positive == self.negative {
            return Err(bad("indices must be distinct"));
        }
        if labels[self.anchor] != labels[self.positive] {
            return Err(bad("positive has a different label than the anchor"));
        }
        if labels[self.anchor] == labels[self.negative] {
            return Err(bad("negative shares the anchor's label"));
        }
        Ok(())
    }
}

/// Sum over triplets of `[|a - p|^2 - |a - n|^2 + margin]_+`.
///
/// The subgradient at the hinge kink is zero.
pub fn triplet_loss(batch: &EmbeddingBatch, triplets: &[Triplet], margin: f64) -> Result<LossOutput> {
    if triplets.is_empty() {
        return Err(Error::DegenerateBatch("no triplets to evaluate".into()));
    }
    for t in triplets {
        t.validate(batch.labels())?;
    }
    let z = batch.embeddings();
    let mut grad = Mat::zeros(z.rows(), z.cols());
    let mut value = 0.0;
    for t in triplets {
        let (a, p, n) = (z.row(t.anchor), z.row(t.positive), z.row(t.negative));
        let slack = sq_dist(a, p) - sq_dist(a, n) + margin;
        if slack <= 0.0 {
            continue;
        }
        value += slack;
        for k in 0..z.cols() {
            let (ak, pk, nk) = (a[k], p[k], n[k]);
            grad.row_mut(t.anchor)[k] += 2.0 * (nk - pk);
            grad.row_mut(t.positive)[k] += 2.0 * (pk - ak);
            grad.row_mut(t.negative)[k] += 2.0 * (ak - nk);
        }
    }
    Ok(LossOutput {
        value,
        grad_embeddings: grad,
        grad_proxies: None,
    })
}

/// Triplet strategy: mines every valid triplet in the batch, up to `cap`.
#[derive(Debug, Clone)]
pub struct TripletLoss {
    pub margin: f64,
    pub cap: usize,
}

impl DmlLoss for TripletLoss {
    fn kind(&self) -> LossKind {
        LossKind::Triplet
    }

    fn evaluate(&self, batch: &EmbeddingBatch, _: Option<&ProxyBank>, rng: &mut Rng) -> Result<LossOutput> {
        let triplets = mine_triplets(batch.labels(), self.cap, rng);
        triplet_loss(batch, &triplets, self.margin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: &[[f64; 2]], labels: &[usize]) -> EmbeddingBatch {
        EmbeddingBatch::from_rows(rows, labels, 2).unwrap()
    }

    #[test]
    fn satisfied_margin_is_zero() {
        let b = batch(&[[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]], &[0, 0, 1]);
        let out = triplet_loss(&b, &[Triplet::new(0, 1, 2)], 1.0).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad_embeddings.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn violated_margin() {
        let b = batch(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]], &[0, 0, 1]);
        let out = triplet_loss(&b, &[Triplet::new(0, 1, 2)], 1.0).unwrap();
        assert_eq!(out.value, 1.0);
    }

    #[test]
    fn coincident_anchor_positive() {
        let b = batch(&[[0.5, 0.5], [0.5, 0.5], [3.0, 0.5]], &[0, 0, 1]);
        let out = triplet_loss(&b, &[Triplet::new(0, 1, 2)], 1.0).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn label_violations_rejected() {
        let b = batch(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]], &[0, 0, 1]);
        for t in [Triplet::new(0, 2, 1), Triplet::new(0, 1, 1), Triplet::new(0, 1, 5)] {
            assert!(matches!(
                triplet_loss(&b, &[t], 1.0),
                Err(Error::InvalidTriplet { .. })
            ));
        }
        assert!(matches!(triplet_loss(&b, &[], 1.0), Err(Error::DegenerateBatch(_))));
    }
}
