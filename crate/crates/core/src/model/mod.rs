//! Encoder layer with per-layer decomposition ahead of attention.
//!
//! Low-rank pipeline per layer:
//! 1. add the sinusoidal table (absolute encoding only),
//! 2. choose `r` from the rank policy and fit `X ~ U Xp` by alternating
//!    optimization, then orthonormalize `U`,
//! 3. project to full-length queries and principal keys/values (rotary
//!    encoding rotates full-length keys and projects them back onto `U`),
//! 4. multi-head low-rank attention,
//! 5. output projection, residual with the layer input, normalization,
//! 6. GELU feedforward, residual, normalization.
//!
//! Standard mode runs the same layer on dense `Q, K, V`; oracle mode keeps
//! the decomposition but evaluates step 4 with the dense first-order kernel.

mod bundle;
mod layer;

pub use bundle::{load_layer, save_layer, LayerSpec};
pub use layer::{
    decompose_input, encoder_forward, gelu, make_sinusoidal, stack_forward, stack_forward_with_rng, EncoderLayer, Norm,
    NormKind, PeMode, PositionalEncoding, LAYER_NORM_EPS,
};
