//! Dense kernels, stable reductions, and the finite-difference oracle.

mod mat;
mod rng;

pub use mat::Mat;
pub use rng::{derive_seed, Rng};

use crate::error::{Error, Result};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

fn check_pair(a: &[f64], b: &[f64], op: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "{op}: lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    check_finite(a, op)?;
    check_finite(b, op)
}

pub(crate) fn check_finite(xs: &[f64], op: &str) -> Result<()> {
    if let Some(i) = xs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(format!("{op}: entry {i} is {}", xs[i])));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, "euclidean")?;
    Ok(sq_dist(a, b).sqrt())
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, "cosine_sim")?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Dimension("softmax of an empty vector".into()));
    }
    check_finite(logits, "softmax")?;
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

pub fn log_sum_exp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Dimension("log_sum_exp of an empty vector".into()));
    }
    Ok(lse_unchecked(xs))
}

pub(crate) fn lse_unchecked(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if xs.len() == 1 || m.is_infinite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::OracleFailure { coordinate: i });
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Gradient agreement in the norm sense: relative error of the whole block,
/// falling back to absolute error when the reference is tiny.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradAgreement {
    pub rel_err: f64,
    pub abs_err: f64,
    pub reference_norm: f64,
}

impl GradAgreement {
    pub fn between(analytic: &[f64], reference: &[f64]) -> Self {
        let abs_err = analytic
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let reference_norm = norm(reference);
        let rel_err = if reference_norm > 0.0 {
            abs_err / reference_norm
        } else {
            abs_err
        };
        Self {
            rel_err,
            abs_err,
            reference_norm,
        }
    }

    /// `rel < rel_tol`, or `abs < abs_tol` whenever the reference norm is below `tiny`.
    pub fn passes(&self, rel_tol: f64, abs_tol: f64, tiny: f64) -> bool {
        if self.reference_norm < tiny {
            self.abs_err < abs_tol
        } else {
            self.rel_err < rel_tol
        }
    }
}
