use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

/// Row normalization applied to first-order score maps.
///
/// For a full-length map `S = 1 + s Q K^T` the row sum and the first-order
/// partition `L + s q . sum_j k_j` coincide. The low-rank kernel evaluates
/// both from the principal scores without forming `S`: `RowSum` as
/// `A'_i . c + (L - |c|^2)` with `c = U^T 1`, and `TaylorDenominator` as
/// `L + s q_i . (Kp^T c)`. `SoftmaxOnScores` normalizes whichever scores the
/// kernel materializes (`L` token scores or `r` principal scores).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalizer {
    #[default]
    RowSum,
    TaylorDenominator,
    SoftmaxOnScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    /// Multiply query-key products by `1/sqrt(head_dim)`.
    pub scale: bool,
    pub normalizer: Normalizer,
    /// Magnitude floor for row denominators; smaller sums are replaced by
    /// `epsilon` carrying the sum's sign.
    pub epsilon: f64,
    /// Rotate queries and keys by position before attending.
    pub rope: bool,
    pub rope_base: f64,
    /// Return the score map alongside the output.
    pub keep_scores: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            scale: true,
            normalizer: Normalizer::RowSum,
            epsilon: 1e-6,
            rope: false,
            rope_base: 10_000.0,
            keep_scores: false,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.rope_base > 0.0 && self.rope_base.is_finite()) {
            return Err(Error::invalid(format!("rope base must be positive, got {}", self.rope_base)));
        }
        Ok(())
    }

    pub(crate) fn score_scale<T: Real>(&self, head_dim: usize) -> T {
        if self.scale {
            T::one() / T::from_usize(head_dim).sqrt()
        } else {
            T::one()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput<T = f64> {
    pub output: Matrix<T>,
    /// Normalized score map, present when `keep_scores` was requested.
    pub scores: Option<Matrix<T>>,
    /// Query rows whose denominator fell inside the epsilon guard.
    pub guarded_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T = f64> {
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    pub heads: usize,
}

impl<T: Real> AttentionWeights<T> {
    pub fn new(wq: Matrix<T>, wk: Matrix<T>, wv: Matrix<T>, heads: usize) -> Result<Self> {
        if wq.shape() != wk.shape() || wq.shape() != wv.shape() {
            return Err(Error::shape(format!(
                "projection weights disagree: wq {:?}, wk {:?}, wv {:?}",
                wq.shape(),
                wk.shape(),
                wv.shape()
            )));
        }
        if heads == 0 || !wq.cols().is_multiple_of(heads) {
            return Err(Error::invalid(format!("{heads} heads do not divide hidden width {}", wq.cols())));
        }
        Ok(Self { wq, wk, wv, heads })
    }

    pub fn model_dim(&self) -> usize {
        self.wq.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.wq.cols()
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim() / self.heads
    }
}
