use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{
    DmlLoss, LossConfig, NPairs, ProxyAnchor, ProxyNca, SoftTriple, SupCon, TripletLoss,
};

/// Builds a strategy from the shared hyperparameter record.
pub type DmlFactory = fn(&LossConfig) -> Box<dyn DmlLoss>;

/// Name -> constructor table for metric-learning strategies.
///
/// `cce` is deliberately absent: it is the baseline objective, not a metric loss.
pub struct LossRegistry {
    factories: BTreeMap<String, DmlFactory>,
}

impl Default for LossRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("triplet", |c| {
            Box::new(TripletLoss {
                margin: c.margin,
                cap: c.max_tuples,
            })
        });
        r.register("npairs", |c| Box::new(NPairs { cap: c.max_tuples }));
        r.register("supcon", |c| {
            Box::new(SupCon {
                temperature: c.temperature,
            })
        });
        r.register("proxynca", |c| {
            Box::new(ProxyNca {
                scale: c.softmax_scale,
                normalize: c.proxynca_normalize,
            })
        });
        r.register("softtriple", |c| {
            Box::new(SoftTriple {
                lambda: c.st_lambda,
                gamma: c.st_gamma,
                delta: c.st_delta,
                proxies_per_class: c.proxies_per_class,
                normalize: c.softtriple_normalize,
            })
        });
        r.register("proxyanchor", |c| {
            Box::new(ProxyAnchor {
                alpha: c.pa_alpha,
                delta: c.pa_delta,
            })
        });
        r
    }
}

impl LossRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// Adds or replaces a strategy under `name`.
    pub fn register(&mut self, name: &str, factory: DmlFactory) {
        self.factories.insert(name.to_ascii_lowercase(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(&name.to_ascii_lowercase())
    }

    /// Looks up `name` and builds it after validating `config`.
    pub fn build_named(&self, name: &str, config: &LossConfig) -> Result<Box<dyn DmlLoss>> {
        config.validate()?;
        let f = self
            .factories
            .get(&name.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("no metric loss registered as '{name}'")))?;
        Ok(f(config))
    }

    /// The strategy selected by `config.kind`, or `None` for plain cross-entropy.
    pub fn build(&self, config: &LossConfig) -> Result<Option<Box<dyn DmlLoss>>> {
        if config.kind == super::LossKind::Cce {
            config.validate()?;
            return Ok(None);
        }
        self.build_named(config.kind.name(), config).map(Some)
    }
}
