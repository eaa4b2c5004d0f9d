use serde::{Deserialize, Serialize};

use crate::linalg::entropy::{ceil_with_slack, svd_entropy, EntropyReport};

/// How many principal components to keep.
///
/// Serialized externally tagged, e.g. `{"fraction": 0.25}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankPolicy {
    Fixed(usize),
    /// `max(1, ceil(f * L))`
    Fraction(f64),
    /// `min(L, ceil(scale * 2^mu))`
    Entropy(f64),
}

impl RankPolicy {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            RankPolicy::Fixed(0) => Err("fixed rank must be positive".into()),
            RankPolicy::Fraction(f) if !(f > 0.0 && f <= 1.0) => Err(format!("fraction must be in (0, 1], got {f}")),
            RankPolicy::Entropy(s) if !(s > 0.0 && s.is_finite()) => {
                Err(format!("entropy scale must be positive, got {s}"))
            }
            _ => Ok(()),
        }
    }

    pub fn needs_spectrum(&self) -> bool {
        matches!(self, RankPolicy::Entropy(_))
    }

    /// Resolve to a rank in `1..=min(L, d)`. `mu` is only evaluated for the
    /// entropy policy.
    pub fn resolve(&self, length: usize, dim: usize, mu: impl FnOnce() -> f64) -> usize {
        let cap = length.min(dim).max(1);
        let raw = match *self {
            RankPolicy::Fixed(r) => r,
            RankPolicy::Fraction(f) => ceil_with_slack(f * length as f64).max(1),
            RankPolicy::Entropy(scale) => ceil_with_slack(scale * mu().exp2()).min(length),
        };
        raw.clamp(1, cap)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum RankSource<'a> {
    Report(&'a EntropyReport),
    Spectrum(&'a [f64]),
}

pub fn select_rank(source: RankSource<'_>, policy: &RankPolicy, length: usize, dim: usize) -> usize {
    policy.resolve(length, dim, || match source {
        RankSource::Report(r) => r.mu,
        // A zero spectrum carries no information beyond rank one.
        RankSource::Spectrum(s) => svd_entropy(s, length.max(1)).map_or(0.0, |r| r.mu),
    })
}
