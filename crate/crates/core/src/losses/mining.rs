//! Tuple construction for the pair- and triplet-based losses.

use crate::numeric::Rng;

use super::{Pair, Triplet};

pub const DEFAULT_TUPLE_CAP: usize = 512;

/// All valid triplets in label order; a uniform subset of `cap` when there are more.
pub fn mine_triplets(labels: &[usize], cap: usize, rng: &mut Rng) -> Vec<Triplet> {
    let n = labels.len();
    let mut all = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for neg in 0..n {
                if labels[neg] != labels[a] {
                    all.push(Triplet::new(a, p, neg));
                }
            }
        }
    }
    subsample(all, cap, rng)
}

/// One randomly chosen positive for every anchor that has one, capped.
pub fn mine_pairs(labels: &[usize], cap: usize, rng: &mut Rng) -> Vec<Pair> {
    let n = labels.len();
    let mut pairs = Vec::new();
    for a in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != a && labels[p] == labels[a]).collect();
        if positives.is_empty() {
            continue;
        }
        let p = positives[rng.below(positives.len())];
        pairs.push(Pair::new(a, p));
    }
    subsample(pairs, cap, rng)
}

fn subsample<T: Copy>(all: Vec<T>, cap: usize, rng: &mut Rng) -> Vec<T> {
    if all.len() <= cap {
        return all;
    }
    let mut keep = rng.sample_indices(all.len(), cap);
    keep.sort_unstable();
    keep.into_iter().map(|i| all[i]).collect()
}
