//! Low-rank self-attention over principal keys and values.
//!
//! Sequence embeddings `X` (L x d) are factorized as `X ~ U Xp` with rank `r`,
//! projected to principal keys and values `Kp = Xp Wk`, `Vp = Xp Wv`, and
//! attended with a first-order score map of shape L x r. Attention cost falls
//! from `O(L^2 d')` to `O(r L d')`.
//!
//! Modules:
//! - [`linalg`]: exact SVD, SVD entropy, alternating rank-r fitting, rank policies.
//! - [`attention`]: softmax, dense first-order and low-rank kernels, heads, rotary encoding.
//! - [`model`]: encoder layers built on the kernels.
//! - [`analysis`]: corpus profiling and energy curves.
//! - [`bench`]: operation counters, closed-form predictions, timing sweeps.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod attention;
pub mod bench;
pub mod cli;
pub mod error;
pub mod io;
pub mod linalg;
pub mod matrix;
pub mod model;
pub mod scalar;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::{Dtype, Real};
