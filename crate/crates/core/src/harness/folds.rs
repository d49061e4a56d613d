//! Seeded train/test splits with stratified few-shot subsamples.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numeric::{derive_seed, Rng};

const FOLD_STREAM: u64 = 0xF01D;
/// Fraction of each fold held out for testing.
pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShotSize {
    Count(usize),
    Full,
}

impl fmt::Display for ShotSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShotSize::Count(n) => write!(f, "{n}"),
            ShotSize::Full => f.write_str("full"),
        }
    }
}

impl FromStr for ShotSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(ShotSize::Full);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(ShotSize::Count(n)),
            _ => Err(Error::Config(format!("shot size must be a positive count or \"full\", got {s:?}"))),
        }
    }
}

impl Serialize for ShotSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ShotSize::Count(n) => s.serialize_u64(*n as u64),
            ShotSize::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for ShotSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) if n > 0 => Ok(ShotSize::Count(n)),
            Raw::N(_) => Err(serde::de::Error::custom("shot size must be positive")),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub fewshot: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub master_seed: u64,
    pub n_folds: usize,
    pub shot_size: ShotSize,
    pub strict: bool,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Per-class quotas proportional to `counts`, remainders by largest fraction
/// (ties to the lower class), then topped up so that every non-empty class
/// receives at least one slot when `total` allows it.
pub fn stratified_quotas(counts: &[usize], total: usize) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return vec![0; counts.len()];
    }
    let total = total.min(n);
    let mut quotas: Vec<usize> = counts.iter().map(|&c| c * total / n).collect();
    let mut rest: Vec<(usize, usize)> = counts.iter().enumerate().map(|(i, &c)| (c * total % n, i)).collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = total - quotas.iter().sum::<usize>();
    for &(_, i) in rest.iter().take(missing) {
        quotas[i] += 1;
    }
    let non_empty = counts.iter().filter(|&&c| c > 0).count();
    if total >= non_empty {
        while let Some(starved) = (0..counts.len()).find(|&i| counts[i] > 0 && quotas[i] == 0) {
            let donor = (0..counts.len())
                .filter(|&i| quotas[i] > 1)
                .max_by(|&a, &b| quotas[a].cmp(&quotas[b]).then(b.cmp(&a)))
                .expect("a class holds more than one slot");
            quotas[donor] -= 1;
            quotas[starved] += 1;
        }
    }
    quotas
}

/// Builds `n_folds` independent 80/20 splits, each with its own derived seed, and
/// draws the few-shot subsample of each training part.
pub fn make_fold_plan(dataset: &Dataset, master_seed: u64, n_folds: usize, shot: ShotSize, strict: bool) -> Result<FoldPlan> {
    let n = dataset.len();
    if n_folds == 0 || n < n_folds {
        return Err(Error::Config(format!("cannot make {n_folds} folds from {n} examples")));
    }
    let n_test = ((n as f64 * TEST_FRACTION).round() as usize).clamp(1, n - 1);
    if let ShotSize::Count(s) = shot {
        if strict && s < dataset.classes {
            return Err(Error::Stratification(format!(
                "shot size {s} cannot cover {} classes",
                dataset.classes
            )));
        }
    }
    let labels = dataset.labels();
    let folds = (0..n_folds)
        .map(|f| {
            let mut rng = Rng::new(derive_seed(master_seed, &[FOLD_STREAM, f as u64]));
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            let mut test = order[..n_test].to_vec();
            let mut train = order[n_test..].to_vec();
            test.sort_unstable();
            train.sort_unstable();
            let fewshot = match shot {
                ShotSize::Full => train.clone(),
                ShotSize::Count(s) => {
                    let mut by_class = vec![Vec::new(); dataset.classes];
                    for &i in &train {
                        by_class[labels[i]].push(i);
                    }
                    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
                    let quotas = stratified_quotas(&counts, s);
                    let mut picked = Vec::with_capacity(s.min(train.len()));
                    for (members, q) in by_class.iter_mut().zip(quotas) {
                        rng.shuffle(members);
                        picked.extend_from_slice(&members[..q]);
                    }
                    picked.sort_unstable();
                    picked
                }
            };
            Fold { train, test, fewshot }
        })
        .collect();
    Ok(FoldPlan {
        master_seed,
        n_folds,
        shot_size: shot,
        strict,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{synth_dataset, SynthSpec};
    use std::collections::BTreeSet;

    fn data(classes: usize, n: usize) -> Dataset {
        synth_dataset(&SynthSpec {
            classes,
            n,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn quotas() {
        assert_eq!(stratified_quotas(&[50, 50], 20), vec![10, 10]);
        assert_eq!(stratified_quotas(&[1, 1, 1], 2), vec![1, 1, 0]);
        assert_eq!(stratified_quotas(&[97, 2, 1], 10), vec![8, 1, 1]);
        assert_eq!(stratified_quotas(&[3, 0, 5], 100), vec![3, 0, 5]);
        assert_eq!(stratified_quotas(&[10, 10, 10], 20), vec![7, 7, 6]);
    }

    #[test]
    fn plan_invariants() {
        let d = data(3, 300);
        for shot in [ShotSize::Count(20), ShotSize::Count(100), ShotSize::Count(1000), ShotSize::Full] {
            let plan = make_fold_plan(&d, 7, 10, shot, true).unwrap();
            assert_eq!(plan.folds.len(), 10);
            for f in &plan.folds {
                let train: BTreeSet<_> = f.train.iter().collect();
                assert!(f.test.iter().all(|i| !train.contains(i)));
                assert_eq!(f.train.len() + f.test.len(), 300);
                assert!(f.fewshot.iter().all(|i| train.contains(i)));
                let want = match shot {
                    ShotSize::Count(s) => s.min(f.train.len()),
                    ShotSize::Full => f.train.len(),
                };
                assert_eq!(f.fewshot.len(), want);
                let classes: BTreeSet<_> = f.fewshot.iter().map(|&i| d.examples[i].label).collect();
                assert_eq!(classes.len(), 3);
            }
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let d = data(2, 100);
        let a = make_fold_plan(&d, 1, 5, ShotSize::Count(20), true).unwrap();
        let b = make_fold_plan(&d, 1, 5, ShotSize::Count(20), true).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = make_fold_plan(&d, 2, 5, ShotSize::Count(20), true).unwrap();
        assert_ne!(a, c);
        assert_ne!(a.folds[0], a.folds[1]);
    }

    #[test]
    fn strict_stratification() {
        let d = data(6, 120);
        assert!(matches!(
            make_fold_plan(&d, 0, 4, ShotSize::Count(5), true),
            Err(Error::Stratification(_))
        ));
        let plan = make_fold_plan(&d, 0, 4, ShotSize::Count(5), false).unwrap();
        assert!(plan.folds.iter().all(|f| f.fewshot.len() == 5));
        assert!(make_fold_plan(&d, 0, 121, ShotSize::Count(20), true).is_err());
    }

    #[test]
    fn shot_size_serde() {
        assert_eq!(serde_json::to_string(&ShotSize::Count(20)).unwrap(), "20");
        assert_eq!(serde_json::to_string(&ShotSize::Full).unwrap(), "\"full\"");
        assert_eq!(serde_json::from_str::<ShotSize>("100").unwrap(), ShotSize::Count(100));
        assert_eq!(serde_json::from_str::<ShotSize>("\"full\"").unwrap(), ShotSize::Full);
        assert!("0".parse::<ShotSize>().is_err());
    }
}
