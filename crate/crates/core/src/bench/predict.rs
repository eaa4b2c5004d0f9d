//! Closed-form operation counts of the benchmark pipelines.
//!
//! Both pipelines use one head, scaled scores and row-sum normalization.
//!
//! Standard (`L` tokens, model width `d`, attention width `d'`):
//! - projection: `Q, K, V = X W`, `3 L d d'` multiply-adds.
//! - attention: scores `L^2 d'`, value mixing `L^2 d'`; the score map holds
//!   `L^2` entries.
//!
//! Low-rank (rank `r`, `it` inner rounds):
//! - decomposition: `2 it r L d` for the alternating matrix-vector products
//!   plus `r L d` for deflation.
//! - projection: `3 r d d'` for `Xp W` plus `L r d'` to rebuild queries.
//! - attention: `1 U` costs `L r` adds, scores `r L d'`, value mixing
//!   `L r d'`; the score map holds `L r` entries.

use serde::{Deserialize, Serialize};

use crate::bench::counter::OpCounter;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Standard,
    Lowrank,
}

impl BenchMode {
    pub const ALL: [BenchMode; 2] = [BenchMode::Standard, BenchMode::Lowrank];

    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Standard => "standard",
            BenchMode::Lowrank => "lowrank",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchDims {
    #[serde(rename = "L")]
    pub length: usize,
    pub r: usize,
    pub d: usize,
    #[serde(rename = "d_prime")]
    pub hidden: usize,
    pub inner_iters: usize,
}

impl BenchDims {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.r == 0 || self.d == 0 || self.hidden == 0 || self.inner_iters == 0 {
            return Err(Error::invalid("benchmark dimensions must be positive"));
        }
        if self.r > self.length.min(self.d) {
            return Err(Error::invalid(format!("rank {} exceeds min(L={}, d={})", self.r, self.length, self.d)));
        }
        Ok(())
    }
}

/// Per-stage tallies. `decomposition` is zero for the standard pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub decomposition: OpCounter,
    pub projection: OpCounter,
    pub attention: OpCounter,
}

impl StageCounts {
    pub fn total(&self) -> OpCounter {
        self.decomposition.merge(&self.projection).merge(&self.attention)
    }

    pub fn same_tally(&self, other: &StageCounts) -> bool {
        self.decomposition.same_tally(&other.decomposition)
            && self.projection.same_tally(&other.projection)
            && self.attention.same_tally(&other.attention)
    }
}

fn counter(multiplies: usize, adds: usize, elementwise: usize, peak: usize, scores: usize) -> OpCounter {
    let mut c = OpCounter::new();
    c.multiplies = multiplies as u64;
    c.adds = adds as u64;
    c.elementwise = elementwise as u64;
    c.peak_values_held = peak as u64;
    c.peak_score_entries = scores as u64;
    c
}

pub fn predicted_ops(dims: &BenchDims, mode: BenchMode) -> StageCounts {
    let BenchDims { length: l, r, d, hidden: dp, inner_iters: it } = *dims;
    match mode {
        BenchMode::Standard => {
            let proj = 3 * l * d * dp;
            let mix = 2 * l * l * dp;
            StageCounts {
                decomposition: OpCounter::default(),
                projection: counter(proj, proj, 0, 0, 0),
                // scale, then max/subtract/exp/sum/divide per score
                attention: counter(mix, mix, 6 * l * l, l * l, l * l),
            }
        }
        BenchMode::Lowrank => {
            let fit = 2 * it * r * l * d + r * l * d;
            let proj = 3 * r * d * dp + l * r * dp;
            let mix = 2 * l * r * dp;
            StageCounts {
                // two norms, two divisions per round
                decomposition: counter(fit, fit, 3 * it * r * (l + d), l * d + l + d, 0),
                projection: counter(proj, proj, 0, r * dp, 0),
                // scale, shift by 1U, row-sum denominators, divide
                attention: counter(mix, mix + l * r, 5 * l * r + l + 2 * r, r + l * r, l * r),
            }
        }
    }
}

/// Bytes resident at the predicted peak: working entries plus input,
/// weights, projections and output.
pub fn predicted_peak_bytes(dims: &BenchDims, mode: BenchMode, element_size: usize) -> u64 {
    let BenchDims { length: l, r, d, hidden: dp, .. } = *dims;
    let stages = predicted_ops(dims, mode);
    let working = [stages.decomposition, stages.projection, stages.attention]
        .iter()
        .map(|c| c.peak_values_held)
        .max()
        .unwrap_or(0);
    let resident = match mode {
        BenchMode::Standard => l * d + 3 * d * dp + 4 * l * dp,
        BenchMode::Lowrank => l * d + 3 * d * dp + l * r + r * d + 2 * l * dp + 2 * r * dp,
    };
    (working + resident as u64) * element_size as u64
}
