//! Analytic-vs-central-difference gradient checks for every loss.
//!
//! Instances are drawn from a seeded stream: `L = 6` observations in `d = 8`
//! dimensions over `C = 3` balanced classes, Gaussian embeddings and proxies.
//! Gradients are compared block-wise (embeddings, proxies) by relative L2
//! error, with an absolute fallback when the reference gradient is tiny.

use serde::Serialize;

use crate::error::Result;
use crate::losses::{
    cce_from_logits, mine_triplets, DmlLoss, EmbeddingBatch, LossConfig, LossKind, LossRegistry,
};
use crate::numeric::{fd_gradient, sq_dist, GradAgreement, Mat, Rng, FD_STEP};
use crate::proxy_bank::ProxyBank;

pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-8;
/// Reference norms below this switch to the absolute criterion.
pub const TINY_GRAD: f64 = 1e-6;
/// Triplet instances with any hinge this close to its kink are redrawn.
pub const KINK_CLEARANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradCheckSpec {
    pub instances: usize,
    pub batch: usize,
    pub dim: usize,
    pub classes: usize,
    pub seed: u64,
    pub step: f64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        Self {
            instances: 50,
            batch: 6,
            dim: 8,
            classes: 3,
            seed: 20_240_611,
            step: FD_STEP,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockResult {
    pub rel_err: f64,
    pub abs_err: f64,
    pub reference_norm: f64,
    pub passed: bool,
}

impl From<GradAgreement> for BlockResult {
    fn from(a: GradAgreement) -> Self {
        Self {
            rel_err: a.rel_err,
            abs_err: a.abs_err,
            reference_norm: a.reference_norm,
            passed: a.passes(REL_TOL, ABS_TOL, TINY_GRAD),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceResult {
    pub instance: usize,
    pub embeddings: BlockResult,
    pub proxies: Option<BlockResult>,
}

impl InstanceResult {
    pub fn passed(&self) -> bool {
        self.embeddings.passed && self.proxies.as_ref().is_none_or(|p| p.passed)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LossCheck {
    pub loss: LossKind,
    pub instances: Vec<InstanceResult>,
}

impl LossCheck {
    pub fn passed(&self) -> bool {
        self.instances.iter().all(InstanceResult::passed)
    }

    pub fn worst_rel_err(&self) -> f64 {
        self.instances
            .iter()
            .flat_map(|r| std::iter::once(&r.embeddings).chain(r.proxies.as_ref()))
            .filter(|b| b.reference_norm >= TINY_GRAD)
            .map(|b| b.rel_err)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub spec: GradCheckSpec,
    pub losses: Vec<LossCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.losses.iter().all(LossCheck::passed)
    }
}

fn gaussian_mat(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).expect("shape")
}

fn balanced_labels(n: usize, classes: usize, rng: &mut Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    rng.shuffle(&mut labels);
    labels
}

/// Per-instance hyperparameters, alternating across the values the checks must cover.
pub fn instance_config(kind: LossKind, instance: usize) -> LossConfig {
    let even = instance.is_multiple_of(2);
    let mut c = LossConfig::new(kind);
    match kind {
        LossKind::Triplet => c.margin = if even { 1.0 } else { 3.0 },
        LossKind::SupCon => c.temperature = if even { 0.1 } else { 0.9 },
        LossKind::ProxyNca => c.softmax_scale = [0.4, 1.0, 3.0][instance % 3],
        LossKind::SoftTriple => {
            c.proxies_per_class = if even { 2 } else { 1 };
            c.st_lambda = if even { 3.3 } else { 10.0 };
            c.st_gamma = 0.1;
            c.st_delta = 0.1;
        }
        LossKind::ProxyAnchor => {
            c.pa_alpha = if even { 16.0 } else { 128.0 };
            c.pa_delta = 0.1;
        }
        LossKind::Cce | LossKind::NPairs => {}
    }
    c
}

fn triplet_near_kink(batch: &EmbeddingBatch, margin: f64) -> bool {
    let z = batch.embeddings();
    mine_triplets(batch.labels(), usize::MAX, &mut Rng::new(0))
        .iter()
        .any(|t| {
            let slack = sq_dist(z.row(t.anchor), z.row(t.positive))
                - sq_dist(z.row(t.anchor), z.row(t.negative))
                + margin;
            slack.abs() < KINK_CLEARANCE
        })
}

fn check_cce(spec: &GradCheckSpec, rng: &mut Rng, instance: usize) -> Result<InstanceResult> {
    let labels = balanced_labels(spec.batch, spec.classes, rng);
    let z = gaussian_mat(spec.batch, spec.dim, rng);
    let w = gaussian_mat(spec.dim, spec.classes, rng);
    let b: Vec<f64> = (0..spec.classes).map(|_| rng.normal()).collect();
    let dense = |zv: &[f64]| -> Mat {
        let mut logits = Mat::zeros(spec.batch, spec.classes);
        for i in 0..spec.batch {
            for c in 0..spec.classes {
                let mut s = b[c];
                for k in 0..spec.dim {
                    s += zv[i * spec.dim + k] * w.get(k, c);
                }
                logits.set(i, c, s);
            }
        }
        logits
    };
    let out = cce_from_logits(&dense(z.as_slice()), &labels)?;
    // chain through the dense layer: dz = dlogits . W^T
    let mut analytic = vec![0.0; spec.batch * spec.dim];
    for i in 0..spec.batch {
        for k in 0..spec.dim {
            analytic[i * spec.dim + k] = (0..spec.classes)
                .map(|c| out.grad_embeddings.get(i, c) * w.get(k, c))
                .sum();
        }
    }
    let fd = fd_gradient(
        |zv| cce_from_logits(&dense(zv), &labels).map_or(f64::NAN, |o| o.value),
        z.as_slice(),
        spec.step,
    )?;
    Ok(InstanceResult {
        instance,
        embeddings: GradAgreement::between(&analytic, &fd).into(),
        proxies: None,
    })
}

fn check_dml(
    spec: &GradCheckSpec,
    loss: &dyn DmlLoss,
    config: &LossConfig,
    rng: &mut Rng,
    instance: usize,
) -> Result<InstanceResult> {
    let batch = loop {
        let labels = balanced_labels(spec.batch, spec.classes, rng);
        let batch = EmbeddingBatch::new(gaussian_mat(spec.batch, spec.dim, rng), labels, spec.classes)?;
        if config.kind != LossKind::Triplet || !triplet_near_kink(&batch, config.margin) {
            break batch;
        }
    };
    let bank = match loss.proxy_layout() {
        Some(layout) => Some(ProxyBank::from_matrix(
            gaussian_mat(spec.classes * layout.per_class, spec.dim, rng),
            spec.classes,
            layout.per_class,
        )?),
        None => None,
    };
    let mining = rng.derive(&[instance as u64]);
    let out = loss.evaluate(&batch, bank.as_ref(), &mut mining.clone())?;

    let fd_embed = fd_gradient(
        |x| {
            batch
                .with_embeddings(x)
                .and_then(|b| loss.evaluate(&b, bank.as_ref(), &mut mining.clone()))
                .map_or(f64::NAN, |o| o.value)
        },
        batch.embeddings().as_slice(),
        spec.step,
    )?;
    let embeddings = GradAgreement::between(out.grad_embeddings.as_slice(), &fd_embed).into();

    let proxies = match (&bank, &out.grad_proxies) {
        (Some(bank), Some(gp)) => {
            let m = bank.matrix();
            let fd = fd_gradient(
                |x| {
                    Mat::from_vec(m.rows(), m.cols(), x.to_vec())
                        .and_then(|mm| ProxyBank::from_matrix(mm, bank.classes(), bank.proxies_per_class()))
                        .and_then(|pb| loss.evaluate(&batch, Some(&pb), &mut mining.clone()))
                        .map_or(f64::NAN, |o| o.value)
                },
                m.as_slice(),
                spec.step,
            )?;
            Some(GradAgreement::between(gp.as_slice(), &fd).into())
        }
        _ => None,
    };
    Ok(InstanceResult {
        instance,
        embeddings,
        proxies,
    })
}

/// Checks one loss on `spec.instances` seeded instances.
pub fn check_loss(kind: LossKind, spec: &GradCheckSpec) -> Result<LossCheck> {
    let registry = LossRegistry::default();
    let mut rng = Rng::new(spec.seed).derive(&[kind as u64]);
    let mut instances = Vec::with_capacity(spec.instances);
    for i in 0..spec.instances {
        let result = if kind == LossKind::Cce {
            check_cce(spec, &mut rng, i)?
        } else {
            let config = instance_config(kind, i);
            let loss = registry.build(&config)?.expect("metric loss");
            check_dml(spec, loss.as_ref(), &config, &mut rng, i)?
        };
        instances.push(result);
    }
    Ok(LossCheck {
        loss: kind,
        instances,
    })
}

/// All seven losses.
pub fn run_suite(spec: &GradCheckSpec) -> Result<GradCheckReport> {
    let losses = LossKind::ALL
        .into_iter()
        .map(|k| check_loss(k, spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradCheckReport {
        spec: *spec,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let spec = GradCheckSpec {
            instances: 4,
            ..GradCheckSpec::default()
        };
        let report = run_suite(&spec).unwrap();
        for l in &report.losses {
            assert!(l.passed(), "{:?} worst {}", l.loss, l.worst_rel_err());
            let has_proxy = l.instances[0].proxies.is_some();
            assert_eq!(has_proxy, l.loss.is_proxy_based());
        }
    }
}
