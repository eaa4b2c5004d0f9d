use serde::{Deserialize, Serialize};

use crate::attention::config::{AttentionConfig, AttentionOutput, AttentionWeights};
use crate::attention::kernels::{lowrank_with_basis_sum, standard_attention, taylor_dense_attention};
use crate::attention::projection::{project_dense, project_qkv, project_rotated_keys};
use crate::attention::rope::apply_rope_heads;
use crate::error::{Error, Result};
use crate::linalg::LowRankFactors;
use crate::matrix::Matrix;
use crate::scalar::Real;

/// Which kernel evaluates each head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelMode {
    #[serde(rename = "standard")]
    Standard,
    #[serde(rename = "lowrank")]
    LowRank,
    /// Dense first-order map over all keys.
    #[serde(rename = "oracle")]
    DenseTaylor,
}

impl KernelMode {
    pub fn name(self) -> &'static str {
        match self {
            KernelMode::Standard => "standard",
            KernelMode::LowRank => "lowrank",
            KernelMode::DenseTaylor => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum AttentionInput<'a, T = f64> {
    Dense(&'a Matrix<T>),
    Factors(&'a LowRankFactors<T>),
}

fn head<T: Real>(m: &Matrix<T>, h: usize, width: usize, heads: usize) -> Matrix<T> {
    if heads == 1 {
        m.clone()
    } else {
        m.column_block(h * width, width)
    }
}

/// Project, split into heads, attend per head and concatenate.
///
/// With factors in low-rank mode every head shares `U` and its column sums.
/// With factors in standard or oracle mode, keys and values are expanded to
/// full length as `U Kp`, `U Vp`. Rotary encoding, when enabled, rotates
/// full-length queries and keys; in low-rank mode the rotated keys are
/// projected back onto `U`, which requires orthonormal factors.
pub fn multi_head_attention<T: Real>(
    input: AttentionInput<'_, T>,
    weights: &AttentionWeights<T>,
    config: &AttentionConfig,
    mode: KernelMode,
) -> Result<AttentionOutput<T>> {
    config.validate()?;
    let heads = weights.heads;
    let width = weights.head_dim();
    let rope = |m: &Matrix<T>| -> Result<Matrix<T>> {
        let positions: Vec<usize> = (0..m.rows()).collect();
        apply_rope_heads(m, &positions, config.rope_base, heads)
    };

    let (q, k, v, basis_sum) = match (input, mode) {
        (AttentionInput::Dense(_), KernelMode::LowRank) => {
            return Err(Error::invalid("low-rank attention needs factorized input"));
        }
        (AttentionInput::Dense(x), _) => {
            let (q, k, v) = project_dense(x, weights)?;
            (q, k, v, None)
        }
        (AttentionInput::Factors(f), KernelMode::LowRank) => {
            let p = project_qkv(f, weights)?;
            let (q, kp) = if config.rope {
                let k_full = rope(&f.u.matmul(&p.kp)?)?;
                (rope(&p.q)?, project_rotated_keys(&k_full, &f.u, f.orthonormal)?)
            } else {
                (p.q, p.kp)
            };
            (q, kp, p.vp, Some(f.u.column_sums()))
        }
        (AttentionInput::Factors(f), _) => {
            let p = project_qkv(f, weights)?;
            (p.q, f.u.matmul(&p.kp)?, f.u.matmul(&p.vp)?, None)
        }
    };
    let (q, k) = if config.rope && basis_sum.is_none() { (rope(&q)?, rope(&k)?) } else { (q, k) };

    let mut outputs = Vec::with_capacity(heads);
    let mut guarded = Vec::new();
    let mut scores = None;
    for h in 0..heads {
        let (qh, kh, vh) = (head(&q, h, width, heads), head(&k, h, width, heads), head(&v, h, width, heads));
        let out = match (mode, &basis_sum) {
            (KernelMode::LowRank, Some(c)) => lowrank_with_basis_sum(&qh, &kh, &vh, c, config)?,
            (KernelMode::DenseTaylor, _) => taylor_dense_attention(&qh, &kh, &vh, config)?,
            _ => standard_attention(&qh, &kh, &vh, config)?,
        };
        guarded.extend(out.guarded_rows);
        if heads == 1 {
            scores = out.scores;
        }
        outputs.push(out.output);
    }
    guarded.sort_unstable();
    guarded.dedup();
    let output = if heads == 1 { outputs.pop().expect("one head") } else { Matrix::hstack(&outputs)? };
    Ok(AttentionOutput { output, scores, guarded_rows: guarded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::config::Normalizer;
    use crate::attention::kernels::lowrank_attention;
    use crate::linalg::exact_truncation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_weights(d: usize, dp: usize, heads: usize, rng: &mut ChaCha8Rng) -> AttentionWeights {
        AttentionWeights::new(
            Matrix::random_normal(d, dp, rng).scale(0.3),
            Matrix::random_normal(d, dp, rng).scale(0.3),
            Matrix::random_normal(d, dp, rng),
            heads,
        )
        .unwrap()
    }

    #[test]
    fn single_head_is_the_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Matrix = Matrix::random_normal(8, 6, &mut rng);
        let f = exact_truncation(&x, 3).unwrap();
        let w = random_weights(6, 4, 1, &mut rng);
        let config = AttentionConfig::default();
        let mh = multi_head_attention(AttentionInput::Factors(&f), &w, &config, KernelMode::LowRank).unwrap();
        let p = project_qkv(&f, &w).unwrap();
        let single = lowrank_attention(&p.q, &p.kp, &p.vp, &f.u, &config).unwrap();
        assert_eq!(mh.output, single.output);

        let mh = multi_head_attention(AttentionInput::Dense(&x), &w, &config, KernelMode::Standard).unwrap();
        let (q, k, v) = project_dense(&x, &w).unwrap();
        assert_eq!(mh.output, standard_attention(&q, &k, &v, &config).unwrap().output);
    }

    #[test]
    fn block_diagonal_heads_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (l, d) = (7, 4);
        let x: Matrix = Matrix::random_normal(l, d, &mut rng);
        let block = |rng: &mut ChaCha8Rng| {
            let a: Matrix = Matrix::random_normal(2, 2, rng);
            let b: Matrix = Matrix::random_normal(2, 2, rng);
            let mut m = Matrix::zeros(4, 4);
            for i in 0..2 {
                for j in 0..2 {
                    m.set(i, j, a.get(i, j));
                    m.set(i + 2, j + 2, b.get(i, j));
                }
            }
            m
        };
        let w = AttentionWeights::new(block(&mut rng), block(&mut rng), block(&mut rng), 2).unwrap();
        let config = AttentionConfig::default();
        for mode in [KernelMode::Standard, KernelMode::DenseTaylor] {
            let whole = multi_head_attention(AttentionInput::Dense(&x), &w, &config, mode).unwrap().output;
            for h in 0..2 {
                let xh = x.column_block(2 * h, 2);
                let sub = |m: &Matrix| m.row_block(2 * h, 2).column_block(2 * h, 2);
                let wh = AttentionWeights::new(sub(&w.wq), sub(&w.wk), sub(&w.wv), 1).unwrap();
                let single = multi_head_attention(AttentionInput::Dense(&xh), &wh, &config, mode).unwrap().output;
                assert!(whole.column_block(2 * h, 2).max_abs_diff(&single).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn head_permutation_permutes_output_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Matrix = Matrix::random_normal(9, 6, &mut rng);
        let f = exact_truncation(&x, 4).unwrap();
        let w = random_weights(6, 6, 3, &mut rng);
        let perm = [2usize, 0, 1];
        let permute =
            |m: &Matrix| Matrix::hstack(&perm.iter().map(|&h| m.column_block(2 * h, 2)).collect::<Vec<_>>()).unwrap();
        let wp = AttentionWeights::new(permute(&w.wq), permute(&w.wk), permute(&w.wv), 3).unwrap();
        let config = AttentionConfig::default();
        let a = multi_head_attention(AttentionInput::Factors(&f), &w, &config, KernelMode::LowRank).unwrap().output;
        let b = multi_head_attention(AttentionInput::Factors(&f), &wp, &config, KernelMode::LowRank).unwrap().output;
        assert!(permute(&a).max_abs_diff(&b).unwrap() < 1e-13);
    }

    #[test]
    fn lowrank_matches_oracle_with_heads_and_rope() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (l, d, r) = (16, 8, 4);
        let a: Matrix = Matrix::random_normal(l, r, &mut rng);
        let x = a.matmul(&Matrix::random_normal(r, d, &mut rng)).unwrap().scale(0.5);
        let f = exact_truncation(&x, r).unwrap();
        let w = random_weights(d, 8, 2, &mut rng);
        for normalizer in [Normalizer::RowSum, Normalizer::TaylorDenominator] {
            let config = AttentionConfig { normalizer, ..Default::default() };
            let lr = multi_head_attention(AttentionInput::Factors(&f), &w, &config, KernelMode::LowRank).unwrap();
            let or = multi_head_attention(AttentionInput::Factors(&f), &w, &config, KernelMode::DenseTaylor).unwrap();
            let err = lr.output.max_abs_diff(&or.output).unwrap() / (1.0 + or.output.max_abs());
            assert!(err < 1e-10, "{normalizer:?} {err}");
        }
        // Rotated keys leave span(U), so the projected path is an approximation;
        // it must still run and stay finite.
        let config = AttentionConfig { rope: true, ..Default::default() };
        let out = multi_head_attention(AttentionInput::Factors(&f), &w, &config, KernelMode::LowRank).unwrap();
        assert!(out.output.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn lowrank_needs_factors_and_orthonormal_basis_for_rope() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Matrix = Matrix::random_normal(4, 4, &mut rng);
        let w = random_weights(4, 4, 1, &mut rng);
        let config = AttentionConfig { rope: true, ..Default::default() };
        assert!(multi_head_attention(AttentionInput::Dense(&x), &w, &config, KernelMode::LowRank).is_err());
        let f = crate::linalg::alternating_lowrank(&x, 2, 2, 0).unwrap();
        assert!(matches!(
            multi_head_attention(AttentionInput::Factors(&f), &w, &config, KernelMode::LowRank),
            Err(Error::Precondition(_))
        ));
    }
}
