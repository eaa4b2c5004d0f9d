//! Greedy rank-1 fitting with deflation.
//!
//! For each component a random right vector `v` is refined by
//! `inner_iters` rounds of
//!
//! ```text
//! u <- X v / ||v||^2
//! v <- X^T u / ||u||^2
//! ```
//!
//! after which `u v^T` is subtracted from the working matrix. The singular
//! value stays folded into `v`, so `U` collects the `u` vectors as columns and
//! `Xp` the `v` vectors as rows. Cost is `O(r L d)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bench::counter;
use crate::error::{Error, Result};
use crate::linalg::factors::{FactorMethod, LowRankFactors};
use crate::matrix::Matrix;
use crate::scalar::{norm_sq, Real};

pub const DEFAULT_INNER_ITERS: usize = 2;
pub const MAX_REDRAWS: usize = 3;
const COLLAPSE_NORM: f64 = 1e-300;

pub fn alternating_lowrank<T: Real>(
    x: &Matrix<T>,
    rank: usize,
    inner_iters: usize,
    seed: u64,
) -> Result<LowRankFactors<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    alternating_lowrank_with_rng(x, rank, inner_iters, &mut rng)
}

pub fn alternating_lowrank_with_rng<T: Real, R: Rng + ?Sized>(
    x: &Matrix<T>,
    rank: usize,
    inner_iters: usize,
    rng: &mut R,
) -> Result<LowRankFactors<T>> {
    let (l, d) = x.shape();
    if rank == 0 || rank > l.min(d) {
        return Err(Error::invalid(format!("rank {rank} outside 1..={}", l.min(d))));
    }
    if inner_iters == 0 {
        return Err(Error::invalid("inner_iters must be positive"));
    }
    // f32 cannot represent 1e-300; fall back to its smallest normal value.
    let collapse = T::lit(COLLAPSE_NORM).max(T::min_positive_value());

    let mut residual = x.clone();
    counter::hold(l * d + l + d);
    let mut u_cols: Vec<Vec<T>> = Vec::with_capacity(rank);
    let mut v_rows: Vec<Vec<T>> = Vec::with_capacity(rank);

    for component in 0..rank {
        let mut fitted = None;
        for _attempt in 0..=MAX_REDRAWS {
            if let Some(pair) = refine(&residual, inner_iters, collapse, rng) {
                fitted = Some(pair);
                break;
            }
        }
        let Some((u, v)) = fitted else {
            counter::release(l * d + l + d);
            return Err(Error::DegenerateComponent { component, retries: MAX_REDRAWS });
        };
        deflate(&mut residual, &u, &v);
        u_cols.push(u);
        v_rows.push(v);
    }
    counter::release(l * d + l + d);

    let u = Matrix::from_fn(l, rank, |i, c| u_cols[c][i]);
    let xp = Matrix::from_vec_unchecked(rank, d, v_rows.concat());
    Ok(LowRankFactors { u, xp, orthonormal: false, method: FactorMethod::Alternating })
}

fn refine<T: Real, R: Rng + ?Sized>(
    residual: &Matrix<T>,
    inner_iters: usize,
    collapse: T,
    rng: &mut R,
) -> Option<(Vec<T>, Vec<T>)> {
    let (l, d) = residual.shape();
    let mut v: Vec<T> = (0..d).map(|_| T::lit(StandardNormal.sample(rng))).collect();
    let mut u = Vec::new();
    for _ in 0..inner_iters {
        let v_norm = norm_sq(&v);
        counter::elementwise(2 * d);
        if !(v_norm.sqrt() > collapse) {
            return None;
        }
        u = residual.matvec(&v);
        u.iter_mut().for_each(|x| *x /= v_norm);
        counter::elementwise(l);

        let u_norm = norm_sq(&u);
        counter::elementwise(2 * l);
        if !(u_norm.sqrt() > collapse) {
            return None;
        }
        v = residual.matvec_transposed(&u);
        v.iter_mut().for_each(|x| *x /= u_norm);
        counter::elementwise(d);
    }
    Some((u, v))
}

fn deflate<T: Real>(residual: &mut Matrix<T>, u: &[T], v: &[T]) {
    let d = residual.cols();
    let data = residual.as_mut_slice();
    for (i, &ui) in u.iter().enumerate() {
        for (x, &vj) in data[i * d..(i + 1) * d].iter_mut().zip(v) {
            *x -= ui * vj;
        }
    }
    counter::product(u.len(), 1, d);
}
