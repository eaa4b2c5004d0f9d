//! Softmax, dense first-order and low-rank attention kernels, projections,
//! multi-head wrapping and rotary position encoding.

pub mod config;
pub mod gradcheck;
pub mod kernels;
pub mod multihead;
pub mod projection;
pub mod rope;

pub use config::{AttentionConfig, AttentionOutput, AttentionWeights, Normalizer};
pub use gradcheck::{gradient_check, GradcheckReport};
pub use kernels::{lowrank_attention, standard_attention, taylor_dense_attention};
pub use multihead::{multi_head_attention, AttentionInput, KernelMode};
pub use projection::{project_dense, project_qkv, project_rotated_keys, PrincipalProjection};
pub use rope::{apply_rope, apply_rope_heads, DEFAULT_ROPE_BASE};
