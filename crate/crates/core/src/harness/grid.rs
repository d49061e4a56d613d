//! Hyperparameter grids and their enumeration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::trainer::TrainConfig;

pub const BETAS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const SMALL_LEARNING_RATES: [f64; 3] = [1e-5, 2e-5, 3e-5];
pub const DESK_LEARNING_RATES: [f64; 3] = [1e-3, 3e-3, 1e-2];
pub const GRID_EPOCHS: [f64; 4] = [8.0, 16.0, 64.0, 128.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(name: &str, values: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            values: values.to_vec(),
        }
    }
}

/// One loss with a list of hyperparameter axes applied on top of a base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub loss: LossKind,
    pub base: TrainConfig,
    pub axes: Vec<Axis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub id: usize,
    pub values: BTreeMap<String, f64>,
    pub config: TrainConfig,
}

/// Sets one named hyperparameter on a training configuration.
pub fn apply_axis(config: &mut TrainConfig, name: &str, value: f64) -> Result<()> {
    let count = |v: f64| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Config(format!("{name} must be a positive integer, got {v}")))
        }
    };
    let l = &mut config.loss;
    match name {
        "beta" => l.beta = value,
        "margin" => l.margin = value,
        "temperature" => l.temperature = value,
        "softmax_scale" => l.softmax_scale = value,
        "k" => l.proxies_per_class = count(value)?,
        "gamma" => l.st_gamma = value,
        "lambda" => l.st_lambda = value,
        "delta" if l.kind == LossKind::SoftTriple => l.st_delta = value,
        "delta" => l.pa_delta = value,
        "alpha" => l.pa_alpha = value,
        "learning_rate" => config.learning_rate = value,
        "epochs" => config.epochs = count(value)?,
        _ => return Err(Error::Config(format!("unknown grid axis {name:?}"))),
    }
    Ok(())
}

impl GridSpec {
    /// The full search space of a metric-learning loss (learning rate and epochs come from `base`).
    pub fn full(loss: LossKind, base: &TrainConfig) -> Self {
        let axes = match loss {
            LossKind::Cce => vec![
                Axis::new("learning_rate", &SMALL_LEARNING_RATES),
                Axis::new("epochs", &GRID_EPOCHS),
            ],
            LossKind::Triplet => vec![Axis::new("margin", &[1.0, 3.0, 5.0, 7.0, 9.0])],
            LossKind::SupCon => vec![Axis::new("temperature", &[0.1, 0.3, 0.5, 0.7, 0.9])],
            LossKind::NPairs => vec![],
            LossKind::ProxyNca => vec![Axis::new(
                "softmax_scale",
                &[0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 3.0, 5.0],
            )],
            LossKind::SoftTriple => vec![
                Axis::new("k", &[5.0, 25.0, 1000.0, 2000.0]),
                Axis::new("gamma", &[0.01, 0.03, 0.05, 0.07, 0.1]),
                Axis::new("lambda", &[1.0, 3.0, 3.3, 4.0, 6.0, 8.0, 10.0]),
                Axis::new("delta", &[0.1, 0.3, 0.5, 0.7, 0.9, 1.0]),
            ],
            LossKind::ProxyAnchor => vec![
                Axis::new("alpha", &[16.0, 32.0, 64.0, 128.0]),
                Axis::new("delta", &[0.0, 0.1, 0.3, 0.5, 0.7, 0.9]),
            ],
        };
        Self::with_beta(loss, base, axes)
    }

    /// A subsample of [`GridSpec::full`] with at most 25 points and the full β list.
    /// For cross-entropy only the learning rate varies, over the wider desk-scale list.
    pub fn desk(loss: LossKind, base: &TrainConfig) -> Self {
        let axes = match loss {
            LossKind::Cce => vec![Axis::new("learning_rate", &DESK_LEARNING_RATES)],
            LossKind::ProxyNca => vec![Axis::new("softmax_scale", &[0.4, 1.0, 1.6, 3.0, 5.0])],
            LossKind::SoftTriple => vec![
                Axis::new("k", &[5.0]),
                Axis::new("gamma", &[0.1]),
                Axis::new("lambda", &[3.3, 10.0]),
                Axis::new("delta", &[0.1, 0.5]),
            ],
            LossKind::ProxyAnchor => vec![
                Axis::new("alpha", &[16.0, 32.0, 64.0, 128.0]),
                Axis::new("delta", &[0.1]),
            ],
            _ => return Self::full(loss, base),
        };
        Self::with_beta(loss, base, axes)
    }

    fn with_beta(loss: LossKind, base: &TrainConfig, mut axes: Vec<Axis>) -> Self {
        if loss != LossKind::Cce {
            axes.push(Axis::new("beta", &BETAS));
        }
        let mut base = base.clone();
        base.loss.kind = loss;
        Self { loss, base, axes }
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.axes.iter().find(|a| a.values.is_empty()) {
            return Err(Error::Config(format!("grid axis {} has no values", a.name)));
        }
        if self.loss != LossKind::Cce && !self.axes.iter().any(|a| a.name == "beta") {
            return Err(Error::Config(format!("{} grid lacks a beta axis", self.loss)));
        }
        if self.base.loss.kind != self.loss {
            return Err(Error::Config("grid base configuration selects another loss".into()));
        }
        Ok(())
    }

    /// Cartesian product in row-major order (last axis fastest).
    pub fn points(&self) -> Result<Vec<GridPoint>> {
        self.validate()?;
        let total = self.len();
        let mut out = Vec::with_capacity(total);
        for id in 0..total {
            let mut rem = id;
            let mut idx = vec![0; self.axes.len()];
            for (a, axis) in self.axes.iter().enumerate().rev() {
                idx[a] = rem % axis.values.len();
                rem /= axis.values.len();
            }
            let mut config = self.base.clone();
            let mut values = BTreeMap::new();
            for (axis, &i) in self.axes.iter().zip(&idx) {
                let v = axis.values[i];
                apply_axis(&mut config, &axis.name, v)?;
                values.insert(axis.name.clone(), v);
            }
            config.loss.validate()?;
            out.push(GridPoint { id, values, config });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_grid_sizes() {
        let base = TrainConfig::default();
        let expect = [
            (LossKind::Triplet, 25),
            (LossKind::SupCon, 25),
            (LossKind::NPairs, 5),
            (LossKind::ProxyNca, 55),
            (LossKind::SoftTriple, 4200),
            (LossKind::ProxyAnchor, 120),
        ];
        for (k, n) in expect {
            let g = GridSpec::full(k, &base);
            assert_eq!(g.len(), n, "{k}");
            assert_eq!(g.points().unwrap().len(), n);
        }
        assert_eq!(GridSpec::full(LossKind::Cce, &base).len(), 12);
    }

    #[test]
    fn desk_grids_are_small_with_full_beta() {
        let base = TrainConfig::default();
        for k in LossKind::DML {
            let g = GridSpec::desk(k, &base);
            assert!(g.len() <= 25 && g.len() >= 5, "{k}");
            let beta = g.axes.iter().find(|a| a.name == "beta").unwrap();
            assert_eq!(beta.values, BETAS);
        }
        assert_eq!(GridSpec::desk(LossKind::Cce, &base).len(), 3);
    }

    #[test]
    fn points_apply_values() {
        let g = GridSpec::full(LossKind::ProxyAnchor, &TrainConfig::default());
        let pts = g.points().unwrap();
        let last = pts.last().unwrap();
        assert_eq!(last.config.loss.pa_alpha, 128.0);
        assert_eq!(last.config.loss.pa_delta, 0.9);
        assert_eq!(last.config.loss.beta, 0.9);
        assert_eq!(pts[1].config.loss.beta, 0.3);
        let st = GridSpec::full(LossKind::SoftTriple, &TrainConfig::default()).points().unwrap();
        assert_eq!(st.last().unwrap().config.loss.proxies_per_class, 2000);
        assert_eq!(st.last().unwrap().config.loss.st_delta, 1.0);
    }

    #[test]
    fn invalid_grids() {
        let mut g = GridSpec::full(LossKind::Triplet, &TrainConfig::default());
        g.axes.retain(|a| a.name != "beta");
        assert!(g.points().is_err());
        let mut g = GridSpec::full(LossKind::Triplet, &TrainConfig::default());
        g.axes[0].values.clear();
        assert!(g.points().is_err());
        let mut c = TrainConfig::default();
        assert!(apply_axis(&mut c, "nope", 1.0).is_err());
        assert!(apply_axis(&mut c, "epochs", 2.5).is_err());
    }
}
