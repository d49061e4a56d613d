//! Synthetic bag-of-words corpora with class-specific vocabularies.

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Example};
use crate::error::{Error, Result};
use crate::numeric::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: usize,
    pub n: usize,
    /// Class-specific tokens per class.
    pub d_signal: usize,
    /// Probability that a token is drawn from the shared noise vocabulary.
    pub noise: f64,
    pub seed: u64,
    pub noise_vocab: usize,
    pub tokens_per_text: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            n: 2000,
            d_signal: 100,
            noise: 0.35,
            seed: 0,
            noise_vocab: 200,
            tokens_per_text: 8,
        }
    }
}

/// Labels are balanced (`i mod C`, shuffled); every token is a class token with
/// probability `1 - noise`, otherwise a shared noise token.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    if spec.classes < 2 || spec.n < spec.classes {
        return Err(Error::Config(format!(
            "synthetic data needs C >= 2 and n >= C, got C={} n={}",
            spec.classes, spec.n
        )));
    }
    if spec.d_signal == 0 || spec.tokens_per_text == 0 || !(0.0..=1.0).contains(&spec.noise) {
        return Err(Error::Config(format!("invalid synthetic spec {spec:?}")));
    }
    if spec.noise > 0.0 && spec.noise_vocab == 0 {
        return Err(Error::Config("noise > 0 needs a noise vocabulary".into()));
    }
    let mut rng = Rng::new(spec.seed);
    let mut labels: Vec<usize> = (0..spec.n).map(|i| i % spec.classes).collect();
    rng.shuffle(&mut labels);
    let examples = labels
        .into_iter()
        .map(|label| {
            let words: Vec<String> = (0..spec.tokens_per_text)
                .map(|_| {
                    if rng.uniform() < spec.noise {
                        format!("noise{}", rng.below(spec.noise_vocab))
                    } else {
                        format!("c{label}w{}", rng.below(spec.d_signal))
                    }
                })
                .collect();
            Example {
                label,
                text: words.join(" "),
            }
        })
        .collect();
    Ok(Dataset {
        name: format!("synth-c{}-n{}-noise{}", spec.classes, spec.n, spec.noise),
        examples,
        classes: spec.classes,
        class_names: (0..spec.classes).map(|c| format!("class{c}")).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let s = SynthSpec::default();
        assert_eq!(synth_dataset(&s).unwrap(), synth_dataset(&s).unwrap());
    }

    #[test]
    fn balanced() {
        let d = synth_dataset(&SynthSpec {
            classes: 6,
            n: 600,
            ..SynthSpec::default()
        })
        .unwrap();
        for c in 0..6 {
            assert_eq!(d.examples.iter().filter(|e| e.label == c).count(), 100);
        }
        let d = synth_dataset(&SynthSpec {
            classes: 3,
            n: 100,
            ..SynthSpec::default()
        })
        .unwrap();
        let counts: Vec<usize> = (0..3).map(|c| d.examples.iter().filter(|e| e.label == c).count()).collect();
        assert!(counts.iter().all(|&k| k == 33 || k == 34));
    }

    #[test]
    fn noiseless_vocabularies_are_disjoint() {
        let d = synth_dataset(&SynthSpec {
            noise: 0.0,
            n: 200,
            ..SynthSpec::default()
        })
        .unwrap();
        for e in &d.examples {
            let prefix = format!("c{}w", e.label);
            assert!(e.text.split(' ').all(|w| w.starts_with(&prefix)));
        }
    }

    #[test]
    fn invalid() {
        let bad = SynthSpec {
            classes: 1,
            ..SynthSpec::default()
        };
        assert!(synth_dataset(&bad).is_err());
        let bad = SynthSpec {
            n: 1,
            ..SynthSpec::default()
        };
        assert!(synth_dataset(&bad).is_err());
    }
}
