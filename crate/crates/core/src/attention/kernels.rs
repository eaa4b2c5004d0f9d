//! Single-head attention kernels.
//!
//! - [`standard_attention`]: softmax over all `L` keys, `O(L^2 d')`.
//! - [`taylor_dense_attention`]: first-order expansion `1 + s q k^T` over all
//!   keys. Full length, used as the oracle for the low-rank kernel.
//! - [`lowrank_attention`]: the same first-order map evaluated against `r`
//!   principal keys, `(1 U + s q Kp^T) Vp`, `O(r L d')`.

use crate::attention::config::{AttentionConfig, AttentionOutput, Normalizer};
use crate::bench::counter;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{dot, Real};

fn check_qkv<T: Real>(q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>) -> Result<()> {
    if q.cols() != k.cols() {
        return Err(Error::shape(format!("query width {} != key width {}", q.cols(), k.cols())));
    }
    if k.rows() != v.rows() {
        return Err(Error::shape(format!("{} keys but {} values", k.rows(), v.rows())));
    }
    Ok(())
}

/// Sign-preserving epsilon floor. `Err` carries nothing; the caller names the row.
#[inline]
pub(crate) fn guard_denominator<T: Real>(den: T, epsilon: T) -> std::result::Result<(T, bool), ()> {
    if !den.is_finite() {
        return Err(());
    }
    if den.abs() > epsilon {
        Ok((den, false))
    } else if den < T::zero() {
        Ok((-epsilon, true))
    } else {
        Ok((epsilon, true))
    }
}

/// In-place max-subtracted softmax of one row.
#[inline]
fn softmax_row<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = T::one() / sum;
    row.iter_mut().for_each(|x| *x *= inv);
}

fn softmax_rows<T: Real>(scores: &mut Matrix<T>) {
    let (l, n) = scores.shape();
    for i in 0..l {
        softmax_row(scores.row_mut(i));
    }
    // max, subtraction, exp, sum, division
    counter::elementwise(5 * l * n);
}

fn scale_in_place<T: Real>(scores: &mut Matrix<T>, s: T, enabled: bool) {
    if enabled {
        scores.as_mut_slice().iter_mut().for_each(|x| *x *= s);
        counter::elementwise(scores.as_slice().len());
    }
}

fn divide_rows<T: Real>(scores: &mut Matrix<T>, dens: &[T]) {
    let n = scores.cols();
    for (i, &den) in dens.iter().enumerate() {
        let inv = T::one() / den;
        scores.row_mut(i).iter_mut().for_each(|x| *x *= inv);
    }
    counter::elementwise(dens.len() * n);
}

fn guarded<T: Real>(raw: Vec<T>, epsilon: f64) -> Result<(Vec<T>, Vec<usize>)> {
    let eps = T::lit(epsilon);
    let mut hits = Vec::new();
    let mut out = Vec::with_capacity(raw.len());
    for (i, den) in raw.into_iter().enumerate() {
        let (d, hit) = guard_denominator(den, eps).map_err(|_| Error::DegenerateNormalization { query: i })?;
        if hit {
            hits.push(i);
        }
        out.push(d);
    }
    Ok((out, hits))
}

fn finish<T: Real>(
    scores: Matrix<T>,
    values: &Matrix<T>,
    config: &AttentionConfig,
    guarded_rows: Vec<usize>,
) -> Result<AttentionOutput<T>> {
    let output = scores.matmul(values)?;
    counter::release_scores(scores.as_slice().len());
    Ok(AttentionOutput { output, scores: config.keep_scores.then_some(scores), guarded_rows })
}

/// `softmax(s q K^T) V` with max subtraction.
pub fn standard_attention<T: Real>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    config: &AttentionConfig,
) -> Result<AttentionOutput<T>> {
    check_qkv(q, k, v)?;
    let s = config.score_scale::<T>(q.cols());
    let mut scores = q.matmul_transb(k)?;
    counter::hold_scores(scores.as_slice().len());
    scale_in_place(&mut scores, s, config.scale);
    softmax_rows(&mut scores);
    finish(scores, v, config, Vec::new())
}

/// Normalized `(1 + s Q K^T) V` over all keys.
pub fn taylor_dense_attention<T: Real>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    config: &AttentionConfig,
) -> Result<AttentionOutput<T>> {
    check_qkv(q, k, v)?;
    let (l, n_keys) = (q.rows(), k.rows());
    let s = config.score_scale::<T>(q.cols());
    let mut scores = q.matmul_transb(k)?;
    counter::hold_scores(l * n_keys);
    scale_in_place(&mut scores, s, config.scale);
    scores.as_mut_slice().iter_mut().for_each(|x| *x += T::one());
    counter::elementwise(l * n_keys);

    let hits = match config.normalizer {
        Normalizer::SoftmaxOnScores => {
            softmax_rows(&mut scores);
            Vec::new()
        }
        Normalizer::RowSum => {
            let raw: Vec<T> = (0..l).map(|i| scores.row(i).iter().copied().sum()).collect();
            counter::elementwise(l * n_keys);
            let (dens, hits) = guarded(raw, config.epsilon)?;
            divide_rows(&mut scores, &dens);
            hits
        }
        Normalizer::TaylorDenominator => {
            let key_sum = k.column_sums();
            counter::hold(key_sum.len());
            let total = T::from_usize(n_keys);
            let raw: Vec<T> = (0..l).map(|i| total + s * dot(q.row(i), &key_sum)).collect();
            counter::elementwise(l * (2 * key_sum.len() + 2));
            counter::release(key_sum.len());
            let (dens, hits) = guarded(raw, config.epsilon)?;
            divide_rows(&mut scores, &dens);
            hits
        }
    };
    finish(scores, v, config, hits)
}

fn check_lowrank<T: Real>(q: &Matrix<T>, kp: &Matrix<T>, vp: &Matrix<T>, u: &Matrix<T>) -> Result<()> {
    check_qkv(q, kp, vp)?;
    if u.rows() != q.rows() {
        return Err(Error::shape(format!("basis has {} rows but there are {} queries", u.rows(), q.rows())));
    }
    if u.cols() != kp.rows() {
        return Err(Error::shape(format!("basis has {} columns but there are {} principal keys", u.cols(), kp.rows())));
    }
    Ok(())
}

/// First-order attention against principal keys and values:
/// `A' = 1 U + s Q Kp^T`, output `normalize(A') Vp`.
pub fn lowrank_attention<T: Real>(
    q: &Matrix<T>,
    kp: &Matrix<T>,
    vp: &Matrix<T>,
    u: &Matrix<T>,
    config: &AttentionConfig,
) -> Result<AttentionOutput<T>> {
    check_lowrank(q, kp, vp, u)?;
    let ones_u = u.column_sums();
    counter::hold(ones_u.len());
    let out = lowrank_with_basis_sum(q, kp, vp, &ones_u, config);
    counter::release(ones_u.len());
    out
}

/// Kernel body with `1 U` already computed, so heads sharing `U` share it.
pub(crate) fn lowrank_with_basis_sum<T: Real>(
    q: &Matrix<T>,
    kp: &Matrix<T>,
    vp: &Matrix<T>,
    ones_u: &[T],
    config: &AttentionConfig,
) -> Result<AttentionOutput<T>> {
    let l = q.rows();
    let r = kp.rows();
    let s = config.score_scale::<T>(q.cols());

    let mut scores = q.matmul_transb(kp)?;
    counter::hold_scores(l * r);
    scale_in_place(&mut scores, s, config.scale);
    for i in 0..l {
        for (x, &c) in scores.row_mut(i).iter_mut().zip(ones_u) {
            *x += c;
        }
    }
    counter::elementwise(l * r);

    let length = T::from_usize(l);
    let hits = match config.normalizer {
        Normalizer::SoftmaxOnScores => {
            softmax_rows(&mut scores);
            Vec::new()
        }
        Normalizer::RowSum => {
            // Row sum of the implied L-token map: A'_i . c + (L - |c|^2).
            let offset = length - dot(ones_u, ones_u);
            let raw: Vec<T> = (0..l).map(|i| dot(scores.row(i), ones_u) + offset).collect();
            counter::elementwise(2 * r + l * (2 * r + 1));
            let (dens, hits) = guarded(raw, config.epsilon)?;
            divide_rows(&mut scores, &dens);
            hits
        }
        Normalizer::TaylorDenominator => {
            // sum_j k_j = Kp^T (U^T 1)
            let d = kp.cols();
            let mut key_sum = vec![T::zero(); d];
            for (c, &w) in ones_u.iter().enumerate() {
                for (z, &x) in key_sum.iter_mut().zip(kp.row(c)) {
                    *z += w * x;
                }
            }
            counter::hold(d);
            let raw: Vec<T> = (0..l).map(|i| length + s * dot(q.row(i), &key_sum)).collect();
            counter::elementwise(2 * r * d + l * (2 * d + 2));
            counter::release(d);
            let (dens, hits) = guarded(raw, config.epsilon)?;
            divide_rows(&mut scores, &dens);
            hits
        }
    };
    finish(scores, vp, config, hits)
}
