//! Detached loss functions. The graph ops in [`super::Graph`] evaluate the
//! same kernels, so an evaluation-time EMD is the training-time EMD minus
//! the gradient bookkeeping.

use super::kernels;
use crate::error::{Error, Result};

/// Tolerance on `sum(q) == 1` when a distribution enters a loss.
pub const NORMALIZATION_TOL: f64 = 1e-4;

pub(crate) fn check_distribution(q: &[f64], what: &str, row: usize) -> Result<()> {
    if q.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Invalid(format!(
            "{what} row {row} has negative or non-finite mass"
        )));
    }
    let s: f64 = q.iter().sum();
    if (s - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Invalid(format!("{what} row {row} sums to {s}, expected 1")));
    }
    Ok(())
}

/// `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::Index {
            index: target,
            len: logits.len(),
        });
    }
    Ok(kernels::cross_entropy_row(logits, target))
}

/// Mean over classes of the logit-space binary cross-entropy.
pub fn binary_cross_entropy(logits: &[f64], targets: &[bool]) -> Result<f64> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::Shape {
            op: "binary_cross_entropy",
            left: vec![logits.len()],
            right: vec![targets.len()],
        });
    }
    let total: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&z, &t)| kernels::bce_element(z, if t { 1.0 } else { 0.0 }))
        .sum();
    Ok(total / logits.len() as f64)
}

/// Earth Mover's Distance between two normalized histograms over the same
/// ordered buckets: `(1/B sum_k |CDF_p(k) - CDF_q(k)|^r)^(1/r)`.
pub fn emd_loss(q_hat: &[f64], q: &[f64], r: f64) -> Result<f64> {
    if q_hat.len() != q.len() || q.is_empty() {
        return Err(Error::Shape {
            op: "emd_loss",
            left: vec![q_hat.len()],
            right: vec![q.len()],
        });
    }
    if !(r >= 1.0 && r.is_finite()) {
        return Err(Error::Invalid(format!("EMD exponent must be >= 1, got {r}")));
    }
    check_distribution(q_hat, "predicted distribution", 0)?;
    check_distribution(q, "target distribution", 0)?;
    Ok(kernels::emd_row(q_hat, q, r, true))
}
