use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{multi_head_attention, AttentionConfig, AttentionInput, AttentionWeights, KernelMode};
use crate::bench::counter;
use crate::error::{Error, Result};
use crate::linalg::{
    alternating_lowrank_with_rng, exact_svd, reorthogonalize, svd_entropy, FactorMethod, LowRankFactors, RankPolicy,
    DEFAULT_INNER_ITERS,
};
use crate::matrix::Matrix;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeMode {
    #[default]
    None,
    AbsoluteSinusoidal,
    Rotary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionalEncoding {
    pub mode: PeMode,
    pub base: f64,
}

impl Default for PositionalEncoding {
    fn default() -> Self {
        Self { mode: PeMode::None, base: 10_000.0 }
    }
}

impl PositionalEncoding {
    pub fn new(mode: PeMode) -> Self {
        Self { mode, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    /// Per-token layer normalization with per-dimension scale and offset.
    #[default]
    Layer,
    /// Pass-through; scale and offset are ignored.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub kind: NormKind,
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl Norm {
    pub fn layer(dim: usize) -> Self {
        Self { kind: NormKind::Layer, scale: vec![1.0; dim], offset: vec![0.0; dim] }
    }

    pub fn identity(dim: usize) -> Self {
        Self { kind: NormKind::Identity, ..Self::layer(dim) }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        if self.kind == NormKind::Identity {
            return x.clone();
        }
        let d = x.cols();
        let mut out = x.clone();
        for i in 0..x.rows() {
            let row = out.row_mut(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * self.scale[j] + self.offset[j];
            }
        }
        counter::elementwise(8 * x.rows() * d);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn_weights: AttentionWeights,
    /// d' x d
    pub wo: Matrix,
    /// d x d_ff
    pub ffn_w1: Matrix,
    /// d_ff x d
    pub ffn_w2: Matrix,
    pub norm1: Norm,
    pub norm2: Norm,
    pub rank_policy: RankPolicy,
    pub config: AttentionConfig,
    /// Orthonormalize `U` after alternating fitting.
    pub reorthogonalize: bool,
    pub inner_iters: usize,
}

impl EncoderLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        attn_weights: AttentionWeights,
        wo: Matrix,
        ffn_w1: Matrix,
        ffn_w2: Matrix,
        norm1: Norm,
        norm2: Norm,
        rank_policy: RankPolicy,
        config: AttentionConfig,
    ) -> Result<Self> {
        let layer = Self {
            attn_weights,
            wo,
            ffn_w1,
            ffn_w2,
            norm1,
            norm2,
            rank_policy,
            config,
            reorthogonalize: true,
            inner_iters: DEFAULT_INNER_ITERS,
        };
        layer.validate()?;
        Ok(layer)
    }

    /// Seeded random layer with `1/sqrt(fan_in)` weight scale and neutral
    /// (unit scale, zero offset) layer norms.
    pub fn random<R: Rng + ?Sized>(
        d: usize,
        hidden: usize,
        d_ff: usize,
        heads: usize,
        rank_policy: RankPolicy,
        config: AttentionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if d == 0 || hidden == 0 || d_ff == 0 {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        let w = |rows: usize, cols: usize, rng: &mut R| {
            Matrix::random_normal(rows, cols, rng).scale(1.0 / (rows as f64).sqrt())
        };
        let attn = AttentionWeights::new(w(d, hidden, rng), w(d, hidden, rng), w(d, hidden, rng), heads)?;
        let wo = w(hidden, d, rng);
        let w1 = w(d, d_ff, rng);
        let w2 = w(d_ff, d, rng);
        Self::new(attn, wo, w1, w2, Norm::layer(d), Norm::layer(d), rank_policy, config)
    }

    /// Layer whose output equals its input: zero attention and feedforward
    /// weights, identity norms.
    pub fn identity(d: usize, hidden: usize, heads: usize) -> Result<Self> {
        let z = || Matrix::zeros(d, hidden);
        let attn = AttentionWeights::new(z(), z(), z(), heads)?;
        Self::new(
            attn,
            Matrix::zeros(hidden, d),
            Matrix::zeros(d, 1),
            Matrix::zeros(1, d),
            Norm::identity(d),
            Norm::identity(d),
            RankPolicy::Fraction(1.0),
            AttentionConfig::default(),
        )
    }

    pub fn model_dim(&self) -> usize {
        self.attn_weights.model_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model_dim();
        let hidden = self.attn_weights.hidden_dim();
        let expect = |name: &str, m: &Matrix, shape: (usize, usize)| {
            if m.shape() == shape {
                Ok(())
            } else {
                Err(Error::shape(format!("{name} is {:?}, expected {:?}", m.shape(), shape)))
            }
        };
        expect("wo", &self.wo, (hidden, d))?;
        let d_ff = self.ffn_w1.cols();
        expect("ffn_w1", &self.ffn_w1, (d, d_ff))?;
        expect("ffn_w2", &self.ffn_w2, (d_ff, d))?;
        for (name, norm) in [("norm1", &self.norm1), ("norm2", &self.norm2)] {
            if norm.scale.len() != d || norm.offset.len() != d {
                return Err(Error::shape(format!("{name} vectors must have length {d}")));
            }
        }
        self.rank_policy.validate().map_err(Error::InvalidInput)?;
        self.config.validate()?;
        if self.inner_iters == 0 {
            return Err(Error::invalid("inner_iters must be positive"));
        }
        Ok(())
    }
}

/// `P[i][2t] = sin(i w_t)`, `P[i][2t+1] = cos(i w_t)` with `w_t = base^(-2t/d)`.
pub fn make_sinusoidal(length: usize, d: usize, base: f64) -> Result<Matrix> {
    if length == 0 || d < 2 {
        return Err(Error::invalid(format!("sinusoidal table needs L >= 1 and d >= 2, got {length}x{d}")));
    }
    Ok(Matrix::from_fn(length, d, |i, j| {
        let t = j / 2;
        let angle = i as f64 * base.powf(-2.0 * t as f64 / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Factor a layer input: rank from the policy (exact spectrum only for the
/// entropy rule), alternating fitting, then optional orthonormalization.
pub fn decompose_input<R: Rng + ?Sized>(
    x: &Matrix,
    policy: &RankPolicy,
    inner_iters: usize,
    orthonormalize: bool,
    rng: &mut R,
) -> Result<LowRankFactors> {
    policy.validate().map_err(Error::InvalidInput)?;
    let (l, d) = x.shape();
    let rank = if policy.needs_spectrum() {
        // Rank selection is configuration, not part of the measured kernel.
        let spectrum = counter::uncounted(|| exact_svd(x))?.singular_values;
        let mu = svd_entropy(&spectrum, l).map_or(0.0, |r| r.mu);
        policy.resolve(l, d, || mu)
    } else {
        policy.resolve(l, d, || 0.0)
    };
    let factors = match alternating_lowrank_with_rng(x, rank, inner_iters, rng) {
        // The input has fewer components than requested: keep the ones found.
        Err(Error::DegenerateComponent { component, .. }) if component > 0 => {
            alternating_lowrank_with_rng(x, component, inner_iters, rng)?
        }
        // An all-zero input is represented exactly by any basis vector.
        Err(Error::DegenerateComponent { component: 0, .. }) if x.max_abs() == 0.0 => {
            let u = Matrix::from_fn(l, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
            LowRankFactors::new(u, Matrix::zeros(1, d), FactorMethod::Alternating)?
        }
        other => other?,
    };
    if orthonormalize {
        reorthogonalize(&factors)
    } else {
        Ok(factors)
    }
}

fn layer_forward<R: Rng + ?Sized>(
    x: &Matrix,
    layer: &EncoderLayer,
    pe: &PositionalEncoding,
    mode: KernelMode,
    rng: &mut R,
) -> Result<Matrix> {
    if x.cols() != layer.model_dim() {
        return Err(Error::shape(format!("input width {} but layer expects {}", x.cols(), layer.model_dim())));
    }
    let config =
        AttentionConfig { rope: pe.mode == PeMode::Rotary, rope_base: pe.base, keep_scores: false, ..layer.config };
    let attended = match mode {
        KernelMode::Standard => multi_head_attention(AttentionInput::Dense(x), &layer.attn_weights, &config, mode)?,
        KernelMode::LowRank | KernelMode::DenseTaylor => {
            let factors = decompose_input(x, &layer.rank_policy, layer.inner_iters, layer.reorthogonalize, rng)?;
            multi_head_attention(AttentionInput::Factors(&factors), &layer.attn_weights, &config, mode)?
        }
    };
    let y = layer.norm1.apply(&attended.output.matmul(&layer.wo)?.add(x)?);
    let hidden = y.matmul(&layer.ffn_w1)?.map(gelu);
    counter::elementwise(hidden.as_slice().len());
    let z = hidden.matmul(&layer.ffn_w2)?.add(&y)?;
    Ok(layer.norm2.apply(&z))
}

fn add_sinusoidal(x: &Matrix, pe: &PositionalEncoding) -> Result<Matrix> {
    if pe.mode == PeMode::AbsoluteSinusoidal {
        x.add(&make_sinusoidal(x.rows(), x.cols(), pe.base)?)
    } else {
        Ok(x.clone())
    }
}

fn check_input(x: &Matrix, pe: &PositionalEncoding) -> Result<()> {
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("input contains non-finite values"));
    }
    if !(pe.base > 0.0 && pe.base.is_finite()) {
        return Err(Error::invalid(format!("positional base must be positive, got {}", pe.base)));
    }
    Ok(())
}

/// One encoder layer; the decomposition draws from a generator seeded with `seed`.
pub fn encoder_forward(
    x: &Matrix,
    layer: &EncoderLayer,
    pe: &PositionalEncoding,
    mode: KernelMode,
    seed: u64,
) -> Result<Matrix> {
    stack_forward(x, std::slice::from_ref(layer), pe, mode, seed)
}

pub fn stack_forward(
    x: &Matrix,
    layers: &[EncoderLayer],
    pe: &PositionalEncoding,
    mode: KernelMode,
    seed: u64,
) -> Result<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    stack_forward_with_rng(x, layers, pe, mode, &mut rng)
}

/// Layers in sequence. The sinusoidal table is added once before the first
/// layer; rotary encoding is applied inside every layer; every layer
/// re-decomposes its own input.
pub fn stack_forward_with_rng<R: Rng + ?Sized>(
    x: &Matrix,
    layers: &[EncoderLayer],
    pe: &PositionalEncoding,
    mode: KernelMode,
    rng: &mut R,
) -> Result<Matrix> {
    check_input(x, pe)?;
    if layers.is_empty() {
        return Err(Error::invalid("empty layer stack"));
    }
    let mut h = add_sinusoidal(x, pe)?;
    for layer in layers {
        h = layer_forward(&h, layer, pe, mode, rng)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Normalizer;
    use crate::bench::counter::measure;

    fn layer(d: usize, hidden: usize, heads: usize, policy: RankPolicy, seed: u64) -> EncoderLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EncoderLayer::random(d, hidden, 2 * d, heads, policy, AttentionConfig::default(), &mut rng).unwrap()
    }

    fn low_rank_input(l: usize, d: usize, r: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Matrix = Matrix::random_normal(l, r, &mut rng);
        a.matmul(&Matrix::random_normal(r, d, &mut rng)).unwrap().scale(0.3)
    }

    #[test]
    fn sinusoidal_table() {
        let p = make_sinusoidal(5, 6, 10_000.0).unwrap();
        assert_eq!(p.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(p.as_slice().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(p, make_sinusoidal(5, 6, 10_000.0).unwrap());
        assert!((p.get(3, 0) - 3f64.sin()).abs() < 1e-15);
        assert!(make_sinusoidal(3, 1, 10_000.0).is_err());
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_191_990_607_477_4).abs() < 1e-12);
        assert!((gelu(-1.0) + 0.158_808_009_392_522_6).abs() < 1e-12);
    }

    #[test]
    fn shape_preserved_for_all_modes() {
        let x = low_rank_input(10, 8, 3, 1);
        for policy in [RankPolicy::Fixed(2), RankPolicy::Fraction(0.5), RankPolicy::Entropy(1.0), RankPolicy::Fixed(99)]
        {
            let layer = layer(8, 8, 2, policy, 2);
            for mode in [KernelMode::Standard, KernelMode::LowRank, KernelMode::DenseTaylor] {
                let y = encoder_forward(&x, &layer, &PositionalEncoding::default(), mode, 0).unwrap();
                assert_eq!(y.shape(), (10, 8));
            }
        }
    }

    #[test]
    fn lowrank_matches_pipeline_oracle_on_exact_rank() {
        let x = low_rank_input(12, 8, 3, 3);
        for normalizer in [Normalizer::RowSum, Normalizer::TaylorDenominator] {
            let mut layer = layer(8, 8, 2, RankPolicy::Fraction(0.5), 4);
            layer.config.normalizer = normalizer;
            let lr = encoder_forward(&x, &layer, &PositionalEncoding::default(), KernelMode::LowRank, 7).unwrap();
            let or = encoder_forward(&x, &layer, &PositionalEncoding::default(), KernelMode::DenseTaylor, 7).unwrap();
            let rel = lr.relative_frobenius_error(&or).unwrap();
            assert!(rel < 1e-6, "{normalizer:?}: {rel}");
        }
    }

    #[test]
    fn single_token_modes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Matrix = Matrix::random_normal(1, 6, &mut rng);
        let layer = layer(6, 4, 2, RankPolicy::Fraction(0.25), 6);
        let a = encoder_forward(&x, &layer, &PositionalEncoding::default(), KernelMode::Standard, 0).unwrap();
        let b = encoder_forward(&x, &layer, &PositionalEncoding::default(), KernelMode::LowRank, 0).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-8);
    }

    #[test]
    fn zero_input_gives_offsets() {
        let mut layer = layer(4, 4, 1, RankPolicy::Fixed(1), 8);
        layer.norm2.offset = vec![0.5, -1.0, 2.0, 0.0];
        let x = Matrix::zeros(3, 4);
        for mode in [KernelMode::Standard, KernelMode::LowRank] {
            let y = encoder_forward(&x, &layer, &PositionalEncoding::default(), mode, 0).unwrap();
            for i in 0..3 {
                assert_eq!(y.row(i), layer.norm2.offset.as_slice());
            }
        }
    }

    #[test]
    fn identity_layer_and_residual_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Matrix = Matrix::random_normal(7, 6, &mut rng);
        let id = EncoderLayer::identity(6, 6, 2).unwrap();
        for mode in [KernelMode::Standard, KernelMode::LowRank] {
            let y = encoder_forward(&x, &id, &PositionalEncoding::default(), mode, 0).unwrap();
            assert!(y.max_abs_diff(&x).unwrap() <= 1e-10);
        }
        let first = layer(6, 6, 2, RankPolicy::Fraction(0.5), 10);
        let one = encoder_forward(&x, &first, &PositionalEncoding::default(), KernelMode::LowRank, 3).unwrap();
        let two = stack_forward(&x, &[first, id], &PositionalEncoding::default(), KernelMode::LowRank, 3).unwrap();
        assert!(one.max_abs_diff(&two).unwrap() <= 1e-8);
    }

    #[test]
    fn stack_counts_are_additive() {
        let x = low_rank_input(16, 8, 4, 11);
        let layer = layer(8, 8, 2, RankPolicy::Fraction(0.25), 12);
        for mode in [KernelMode::Standard, KernelMode::LowRank] {
            let (_, one) = measure(|| encoder_forward(&x, &layer, &PositionalEncoding::default(), mode, 1).unwrap());
            let layers = vec![layer.clone(); 3];
            let (_, three) = measure(|| stack_forward(&x, &layers, &PositionalEncoding::default(), mode, 1).unwrap());
            assert_eq!(three.multiplies, 3 * one.multiplies);
            assert_eq!(three.adds, 3 * one.adds);
        }
    }

    #[test]
    fn deterministic_and_positional_modes() {
        let x = low_rank_input(8, 6, 2, 13);
        let layer = layer(6, 6, 3, RankPolicy::Fraction(0.5), 14);
        for mode in [PeMode::None, PeMode::AbsoluteSinusoidal, PeMode::Rotary] {
            let pe = PositionalEncoding::new(mode);
            let a = encoder_forward(&x, &layer, &pe, KernelMode::LowRank, 5).unwrap();
            let b = encoder_forward(&x, &layer, &pe, KernelMode::LowRank, 5).unwrap();
            assert_eq!(a, b);
            assert!(a.as_slice().iter().all(|v| v.is_finite()));
        }
        let odd = layer_for_odd_heads();
        let pe = PositionalEncoding::new(PeMode::Rotary);
        assert!(encoder_forward(&x, &odd, &pe, KernelMode::Standard, 0).is_err());
    }

    fn layer_for_odd_heads() -> EncoderLayer {
        // hidden 6 over 2 heads gives odd head width 3.
        layer(6, 6, 2, RankPolicy::Fixed(2), 15)
    }
}
