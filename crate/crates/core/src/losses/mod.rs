//! Categorical cross-entropy, six metric-learning losses, and their weighted combination.
//!
//! Every loss returns its value together with analytic gradients with
//! respect to the embeddings and, for proxy-based losses, the proxy bank.
//! The metric-learning losses are also available as [`DmlLoss`] strategies
//! constructed by name through [`LossRegistry`].

mod cce;
mod mining;
mod normalize;
mod npairs;
mod proxyanchor;
mod proxynca;
mod registry;
mod softtriple;
mod supcon;
mod triplet;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{check_finite, Mat, Rng};
use crate::proxy_bank::ProxyBank;

pub use cce::{cce_from_logits, cce_loss};
pub use mining::{mine_pairs, mine_triplets, DEFAULT_TUPLE_CAP};
pub use npairs::{npairs_loss, NPairs, Pair};
pub use proxyanchor::{proxyanchor_loss, ProxyAnchor};
pub use proxynca::{proxynca_loss, ProxyNca};
pub use registry::{DmlFactory, LossRegistry};
pub use softtriple::{softtriple_loss, SoftTriple};
pub use supcon::{supcon_loss, SupCon};
pub use triplet::{triplet_loss, Triplet, TripletLoss};

/// Pooled representations of one mini-batch with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    embeddings: Mat,
    labels: Vec<usize>,
    classes: usize,
}

impl EmbeddingBatch {
    pub fn new(embeddings: Mat, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if embeddings.rows() == 0 || embeddings.cols() == 0 {
            return Err(Error::Dimension(format!(
                "embedding batch must be at least 1x1, got {:?}",
                embeddings.shape()
            )));
        }
        if labels.len() != embeddings.rows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} embeddings",
                labels.len(),
                embeddings.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Label(format!("label {bad} is not below class count {classes}")));
        }
        check_finite(embeddings.as_slice(), "embedding batch")?;
        Ok(Self {
            embeddings,
            labels,
            classes,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], labels: &[usize], classes: usize) -> Result<Self> {
        Self::new(Mat::from_rows(rows)?, labels.to_vec(), classes)
    }

    pub fn embeddings(&self) -> &Mat {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// Same batch with rows reordered so that new row `i` is old row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let rows: Vec<&[f64]> = order.iter().map(|&i| self.embeddings.row(i)).collect();
        let labels: Vec<usize> = order.iter().map(|&i| self.labels[i]).collect();
        Self::from_rows(&rows, &labels, self.classes)
    }

    /// Replaces the embedding values, keeping labels. Used by gradient probes.
    pub fn with_embeddings(&self, values: &[f64]) -> Result<Self> {
        Self::new(
            Mat::from_vec(self.embeddings.rows(), self.embeddings.cols(), values.to_vec())?,
            self.labels.clone(),
            self.classes,
        )
    }
}

/// Loss value with gradients w.r.t. embeddings (or logits, for cross-entropy) and proxies.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_embeddings: Mat,
    pub grad_proxies: Option<Mat>,
}

impl LossOutput {
    /// A zero contribution of the given shapes.
    pub fn zero(rows: usize, cols: usize, proxy_shape: Option<(usize, usize)>) -> Self {
        Self {
            value: 0.0,
            grad_embeddings: Mat::zeros(rows, cols),
            grad_proxies: proxy_shape.map(|(r, c)| Mat::zeros(r, c)),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad_embeddings.is_finite()
            && self.grad_proxies.as_ref().is_none_or(Mat::is_finite)
    }
}

/// `beta * cce + (1 - beta) * dml` applied to the value and every gradient entry.
///
/// A missing proxy gradient on either side counts as zero.
pub fn combined_loss(cce: &LossOutput, dml: &LossOutput, beta: f64) -> Result<LossOutput> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta must lie in [0, 1], got {beta}")));
    }
    if cce.grad_embeddings.shape() != dml.grad_embeddings.shape() {
        return Err(Error::Dimension(format!(
            "embedding gradients {:?} and {:?} differ",
            cce.grad_embeddings.shape(),
            dml.grad_embeddings.shape()
        )));
    }
    let w = 1.0 - beta;
    let mix = |a: &Mat, b: &Mat| -> Mat {
        let vals = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| beta * x + w * y)
            .collect();
        Mat::from_vec(a.rows(), a.cols(), vals).expect("shapes checked")
    };
    let grad_proxies = match (&cce.grad_proxies, &dml.grad_proxies) {
        (None, None) => None,
        (Some(a), Some(b)) => {
            if a.shape() != b.shape() {
                return Err(Error::Dimension("proxy gradient shapes differ".into()));
            }
            Some(mix(a, b))
        }
        (Some(a), None) => Some(mix(a, &Mat::zeros(a.rows(), a.cols()))),
        (None, Some(b)) => Some(mix(&Mat::zeros(b.rows(), b.cols()), b)),
    };
    Ok(LossOutput {
        value: beta * cce.value + w * dml.value,
        grad_embeddings: mix(&cce.grad_embeddings, &dml.grad_embeddings),
        grad_proxies,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Cce,
    Triplet,
    NPairs,
    SupCon,
    ProxyNca,
    SoftTriple,
    ProxyAnchor,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::Cce,
        LossKind::Triplet,
        LossKind::NPairs,
        LossKind::SupCon,
        LossKind::ProxyNca,
        LossKind::SoftTriple,
        LossKind::ProxyAnchor,
    ];

    pub const DML: [LossKind; 6] = [
        LossKind::Triplet,
        LossKind::NPairs,
        LossKind::SupCon,
        LossKind::ProxyNca,
        LossKind::SoftTriple,
        LossKind::ProxyAnchor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Cce => "cce",
            LossKind::Triplet => "triplet",
            LossKind::NPairs => "npairs",
            LossKind::SupCon => "supcon",
            LossKind::ProxyNca => "proxynca",
            LossKind::SoftTriple => "softtriple",
            LossKind::ProxyAnchor => "proxyanchor",
        }
    }

    /// Row label used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            LossKind::Cce => "CCE",
            LossKind::Triplet => "Triplet",
            LossKind::NPairs => "NPairs",
            LossKind::SupCon => "SupCon",
            LossKind::ProxyNca => "ProxyNCA",
            LossKind::SoftTriple => "SoftTriple",
            LossKind::ProxyAnchor => "ProxyAnchor",
        }
    }

    pub fn is_proxy_based(self) -> bool {
        matches!(
            self,
            LossKind::ProxyNca | LossKind::SoftTriple | LossKind::ProxyAnchor
        )
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown loss '{s}'")))
    }
}

fn default_true() -> bool {
    true
}

fn default_cap() -> usize {
    DEFAULT_TUPLE_CAP
}

/// Loss selection plus every loss hyperparameter. Only the fields of the
/// selected variant are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Triplet margin `m`.
    pub margin: f64,
    /// SupCon temperature.
    pub temperature: f64,
    /// ProxyNCA distance scale.
    pub softmax_scale: f64,
    /// SoftTriple scale λ.
    pub st_lambda: f64,
    /// SoftTriple entropy temperature γ.
    pub st_gamma: f64,
    /// SoftTriple margin δ.
    pub st_delta: f64,
    /// SoftTriple proxies per class.
    pub proxies_per_class: usize,
    /// ProxyAnchor scale α.
    pub pa_alpha: f64,
    /// ProxyAnchor margin δ.
    pub pa_delta: f64,
    /// Weight of cross-entropy in the combined objective.
    pub beta: f64,
    #[serde(default = "default_true")]
    pub proxynca_normalize: bool,
    #[serde(default = "default_true")]
    pub softtriple_normalize: bool,
    /// Upper bound on mined triplets / pairs per batch.
    #[serde(default = "default_cap")]
    pub max_tuples: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Cce,
            margin: 1.0,
            temperature: 0.1,
            softmax_scale: 1.0,
            st_lambda: 3.3,
            st_gamma: 0.1,
            st_delta: 0.1,
            proxies_per_class: 5,
            pa_alpha: 32.0,
            pa_delta: 0.1,
            beta: 0.5,
            proxynca_normalize: true,
            softtriple_normalize: true,
            max_tuples: DEFAULT_TUPLE_CAP,
        }
    }
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be > 0, got {v}")))
            }
        };
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        match self.kind {
            LossKind::Cce | LossKind::NPairs => {}
            LossKind::Triplet => {
                if !(self.margin >= 0.0) {
                    return Err(Error::Config(format!("margin must be >= 0, got {}", self.margin)));
                }
            }
            LossKind::SupCon => positive("temperature", self.temperature)?,
            LossKind::ProxyNca => positive("softmax_scale", self.softmax_scale)?,
            LossKind::SoftTriple => {
                positive("st_gamma", self.st_gamma)?;
                if self.proxies_per_class == 0 {
                    return Err(Error::Config("proxies_per_class must be >= 1".into()));
                }
            }
            LossKind::ProxyAnchor => positive("pa_alpha", self.pa_alpha)?,
        }
        if matches!(self.kind, LossKind::Triplet | LossKind::NPairs) && self.max_tuples == 0 {
            return Err(Error::Config("max_tuples must be >= 1".into()));
        }
        Ok(())
    }

    /// Proxy bank shape required by the selected loss, if any.
    pub fn proxy_layout(&self) -> Option<ProxyLayout> {
        match self.kind {
            LossKind::ProxyNca => Some(ProxyLayout {
                per_class: 1,
                renormalize: self.proxynca_normalize,
            }),
            LossKind::SoftTriple => Some(ProxyLayout {
                per_class: self.proxies_per_class,
                renormalize: self.softtriple_normalize,
            }),
            LossKind::ProxyAnchor => Some(ProxyLayout {
                per_class: 1,
                renormalize: true,
            }),
            _ => None,
        }
    }
}

/// How a proxy-based loss expects its bank to be laid out and maintained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProxyLayout {
    pub per_class: usize,
    /// Rows are rescaled to unit norm after every optimizer step.
    pub renormalize: bool,
}

/// A metric-learning loss strategy.
///
/// `rng` drives tuple mining for pair/triplet losses; proxy losses ignore it.
pub trait DmlLoss: Send + Sync {
    fn kind(&self) -> LossKind;

    fn proxy_layout(&self) -> Option<ProxyLayout> {
        None
    }

    fn evaluate(
        &self,
        batch: &EmbeddingBatch,
        proxies: Option<&ProxyBank>,
        rng: &mut Rng,
    ) -> Result<LossOutput>;
}

pub(crate) fn require_proxies(
    kind: LossKind,
    proxies: Option<&ProxyBank>,
) -> Result<&ProxyBank> {
    proxies.ok_or_else(|| Error::Config(format!("{kind} needs a proxy bank")))
}

/// Checks that the bank covers every label and matches the embedding width.
pub(crate) fn check_bank(batch: &EmbeddingBatch, bank: &ProxyBank, per_class: Option<usize>) -> Result<()> {
    if bank.dim() != batch.dim() {
        return Err(Error::Dimension(format!(
            "proxy dim {} vs embedding dim {}",
            bank.dim(),
            batch.dim()
        )));
    }
    if let Some(&bad) = batch.labels().iter().find(|&&y| y >= bank.classes()) {
        return Err(Error::Label(format!(
            "label {bad} has no proxy (bank holds {} classes)",
            bank.classes()
        )));
    }
    if let Some(k) = per_class {
        if bank.proxies_per_class() != k {
            return Err(Error::Config(format!(
                "loss expects {k} proxy per class, bank has {}",
                bank.proxies_per_class()
            )));
        }
    }
    Ok(())
}
