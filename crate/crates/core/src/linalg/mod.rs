//! Exact and approximate low-rank factorization, SVD entropy, energy
//! accounting and rank selection.

pub mod alternating;
pub mod entropy;
pub mod factors;
pub mod rank;
pub mod svd;

pub use alternating::{alternating_lowrank, alternating_lowrank_with_rng, DEFAULT_INNER_ITERS};
pub use entropy::{svd_entropy, EntropyReport};
pub use factors::{energy_ratio, exact_truncation, reorthogonalize, truncate_svd, FactorMethod, LowRankFactors};
pub use rank::{select_rank, RankPolicy, RankSource};
pub use svd::{exact_svd, SvdResult};

use crate::error::Result;
use crate::matrix::Matrix;

/// Entropy report of a matrix from its exact spectrum, with `L = rows`.
pub fn matrix_entropy(x: &Matrix) -> Result<EntropyReport> {
    let svd = exact_svd(x)?;
    svd_entropy(&svd.singular_values, x.rows())
}
