use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the unit sum of a normalized distribution.
pub const SUM_TOL: f64 = 1e-6;

/// Ordered score values `s_1 < ... < s_B` attached to the buckets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketScale {
    values: Vec<f64>,
}

impl BucketScale {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Invalid("a score scale needs at least 2 buckets".into()));
        }
        if values
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return Err(Error::Invalid(format!(
                "bucket values must be strictly increasing: {values:?}"
            )));
        }
        Ok(BucketScale { values })
    }

    /// `1, 2, ..., B`: the layout of the AADB, AVA and Photo.net presets.
    pub fn unit(buckets: usize) -> Result<Self> {
        BucketScale::new((1..=buckets).map(|s| s as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Default high/low threshold for this scale: 5 on a 10-bucket scale,
    /// the scale midpoint otherwise.
    pub fn default_threshold(&self) -> f64 {
        if self.len() == 10 && self.min() == 1.0 && self.max() == 10.0 {
            5.0
        } else {
            0.5 * (self.min() + self.max())
        }
    }

    /// `sum_i s_i p_i`.
    pub fn mean(&self, probs: &[f64]) -> f64 {
        self.values.iter().zip(probs).map(|(s, p)| s * p).sum()
    }
}

/// l1-normalized histogram of ratings for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreDistribution {
    pub id: String,
    pub probs: Vec<f64>,
}

impl ScoreDistribution {
    /// Normalizes raw vote counts. Negative, non-finite and all-zero rows are
    /// rejected.
    pub fn from_counts(id: impl Into<String>, counts: &[f64]) -> Result<Self> {
        let id = id.into();
        if counts.is_empty() {
            return Err(Error::Invalid(format!("{id}: empty score histogram")));
        }
        if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Invalid(format!("{id}: negative or non-finite vote count")));
        }
        let total: f64 = counts.iter().sum();
        if total <= 0.0 {
            return Err(Error::Invalid(format!("{id}: all vote counts are zero")));
        }
        Ok(ScoreDistribution {
            id,
            probs: counts.iter().map(|c| c / total).collect(),
        })
    }

    pub fn buckets(&self) -> usize {
        self.probs.len()
    }
}

/// Gaussian density evaluated at each bucket value, renormalized.
/// As `sigma -> 0` this tends to a one-hot at the nearest bucket.
pub fn discretized_gaussian(mean: f64, sigma: f64, scale: &BucketScale) -> Vec<f64> {
    let logits: Vec<f64> = scale
        .values()
        .iter()
        .map(|s| -((s - mean) / sigma).powi(2) / 2.0)
        .collect();
    normalize_log_weights(&logits)
}

/// Discretized Gaussian, exponentially tilted so its mean over `scale`
/// equals `mean` exactly (to solver precision).
///
/// A plain density-at-bucket discretization drifts toward the nearest
/// bucket when `sigma` is small relative to the bucket spacing and toward
/// the scale centre when the tails are truncated. The tilt
/// `p_i ∝ N(s_i; mean, sigma) exp(lambda s_i)` keeps the spread set by
/// `sigma` while pinning the first moment. Means outside the open scale
/// interval collapse to the end bucket.
pub fn mean_matched_gaussian(mean: f64, sigma: f64, scale: &BucketScale) -> Vec<f64> {
    let b = scale.len();
    if mean <= scale.min() {
        let mut p = vec![0.0; b];
        p[0] = 1.0;
        return p;
    }
    if mean >= scale.max() {
        let mut p = vec![0.0; b];
        p[b - 1] = 1.0;
        return p;
    }
    let base: Vec<f64> = scale
        .values()
        .iter()
        .map(|s| -((s - mean) / sigma).powi(2) / 2.0)
        .collect();
    let tilted = |lambda: f64| -> Vec<f64> {
        let logits: Vec<f64> = base.iter().zip(scale.values()).map(|(l, s)| l + lambda * s).collect();
        normalize_log_weights(&logits)
    };
    // The tilted mean is increasing in lambda; bracket, then bisect.
    let mean_at = |lambda: f64| scale.mean(&tilted(lambda));
    let mut step = 1.0 / (sigma * sigma).max(1e-12);
    let (mut lo, mut hi) = (-step, step);
    while mean_at(lo) > mean {
        step *= 2.0;
        lo = -step;
    }
    while mean_at(hi) < mean {
        step *= 2.0;
        hi = step;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < mean {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(lo.abs()).max(1.0) {
            break;
        }
    }
    tilted(0.5 * (lo + hi))
}

fn normalize_log_weights(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}
