use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack subtracted before taking a ceiling so that values like
/// `4.000000000000001` produced by rounding are not promoted to 5.
pub(crate) const CEIL_SLACK: f64 = 1e-9;

pub(crate) fn ceil_with_slack(x: f64) -> usize {
    (x - CEIL_SLACK).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    /// SVD entropy in bits.
    pub mu: f64,
    /// `ceil(2^mu)`, clamped to the number of singular values.
    pub effective_rank: usize,
    /// `effective_rank / L`.
    pub ratio: f64,
}

/// Base-2 SVD entropy of a spectrum.
///
/// Normalizes `sigma_i` by their sum, then returns `-log2(sum sigma_bar_i^2)`.
/// The input is sorted internally, so unsorted spectra are accepted.
pub fn svd_entropy(singular_values: &[f64], length: usize) -> Result<EntropyReport> {
    if length == 0 {
        return Err(Error::invalid("sequence length must be positive"));
    }
    if singular_values.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::invalid("singular values must be finite and non-negative"));
    }
    let mut sv = singular_values.to_vec();
    sv.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sv.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all singular values are zero".into()));
    }
    let concentration: f64 = sv.iter().map(|s| (s / total) * (s / total)).sum();
    let count = sv.len();
    let mu = (-concentration.log2()).clamp(0.0, (count as f64).log2());
    let effective_rank = ceil_with_slack(mu.exp2()).clamp(1, count);
    Ok(EntropyReport { mu, effective_rank, ratio: effective_rank as f64 / length as f64 })
}
