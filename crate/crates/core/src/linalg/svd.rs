//! Full SVD by one-sided (Hestenes) Jacobi rotations.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{dot, norm_sq};

const MAX_SWEEPS: usize = 80;
const ROTATION_TOL: f64 = 1e-15;

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Non-increasing, non-negative, length `min(rows, cols)`.
    pub singular_values: Vec<f64>,
    /// `rows x m`, orthonormal columns.
    pub left_vectors: Matrix,
    /// `cols x m`, orthonormal columns.
    pub right_vectors: Matrix,
}

impl SvdResult {
    pub fn rank_count(&self, threshold: f64) -> usize {
        self.singular_values.iter().filter(|&&s| s > threshold).count()
    }

    /// `sum_{i < k} sigma_i u_i v_i^T`
    pub fn reconstruct(&self, k: usize) -> Matrix {
        let k = k.min(self.singular_values.len()).max(1);
        let rows = self.left_vectors.rows();
        let cols = self.right_vectors.rows();
        Matrix::from_fn(rows, cols, |i, j| {
            (0..k).map(|c| self.singular_values[c] * self.left_vectors.get(i, c) * self.right_vectors.get(j, c)).sum()
        })
    }
}

pub fn exact_svd(x: &Matrix) -> Result<SvdResult> {
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("exact_svd: non-finite entry"));
    }
    let mut res = if x.rows() >= x.cols() {
        jacobi_tall(x)?
    } else {
        let t = jacobi_tall(&x.transpose())?;
        SvdResult { singular_values: t.singular_values, left_vectors: t.right_vectors, right_vectors: t.left_vectors }
    };
    fix_signs(&mut res);
    Ok(res)
}

/// SVD of an `m x n` matrix with `m >= n`, orthogonalizing its columns.
fn jacobi_tall(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    // Row j of `w` is column j of the working matrix; row j of `v` is column j of V.
    let mut w = a.transpose().into_vec();
    let mut v = Matrix::<f64>::identity(n).into_vec();

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (wp, wq) = pair(&mut w, m, p, q);
                let alpha = norm_sq(wp);
                let beta = norm_sq(wq);
                let gamma = dot(wp, wq);
                if gamma == 0.0 || gamma.abs() <= ROTATION_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(wp, wq, c, s);
                let (vp, vq) = pair(&mut v, n, p, q);
                rotate(vp, vq, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { iterations: MAX_SWEEPS });
    }

    let mut order: Vec<(usize, f64)> = (0..n).map(|j| (j, norm_sq(&w[j * m..(j + 1) * m]).sqrt())).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let sigma_max = order.first().map_or(0.0, |o| o.1);
    let negligible = sigma_max * (m.max(n) as f64) * f64::EPSILON;

    let singular_values: Vec<f64> = order.iter().map(|o| o.1).collect();
    let mut left_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &(j, sigma)) in order.iter().enumerate() {
        if sigma > negligible && sigma > 0.0 {
            left_cols.push(w[j * m..(j + 1) * m].iter().map(|x| x / sigma).collect());
        } else {
            left_cols.push(Vec::new());
            missing.push(k);
        }
    }
    complete_basis(&mut left_cols, &missing, m);

    let left_vectors = Matrix::from_fn(m, n, |i, k| left_cols[k][i]);
    let right_vectors = Matrix::from_fn(n, n, |i, k| v[order[k].0 * n + i]);
    Ok(SvdResult { singular_values, left_vectors, right_vectors })
}

fn pair(buf: &mut [f64], len: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (head, tail) = buf.split_at_mut(q * len);
    (&mut head[p * len..(p + 1) * len], &mut tail[..len])
}

fn rotate(xp: &mut [f64], xq: &mut [f64], c: f64, s: f64) {
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Fill the empty slots listed in `missing` with unit vectors orthogonal to
/// every other column, drawn from the canonical basis by Gram-Schmidt.
fn complete_basis(cols: &mut [Vec<f64>], missing: &[usize], m: usize) {
    for &slot in missing {
        let mut best: Option<Vec<f64>> = None;
        let mut best_norm = 0.0;
        for e in 0..m {
            let mut cand = vec![0.0; m];
            cand[e] = 1.0;
            for _ in 0..2 {
                for c in cols.iter().filter(|c| !c.is_empty()) {
                    let proj = dot(&cand, c);
                    for (x, y) in cand.iter_mut().zip(c) {
                        *x -= proj * y;
                    }
                }
            }
            let nrm = norm_sq(&cand).sqrt();
            if nrm > best_norm {
                best_norm = nrm;
                best = Some(cand);
            }
            if nrm > 0.5 {
                break;
            }
        }
        let mut b = best.expect("canonical basis spans the space");
        b.iter_mut().for_each(|x| *x /= best_norm);
        cols[slot] = b;
    }
}

/// First entry of each right vector with magnitude above 1e-12 is made positive.
fn fix_signs(res: &mut SvdResult) {
    let k = res.singular_values.len();
    for c in 0..k {
        let lead = (0..res.right_vectors.rows()).map(|i| res.right_vectors.get(i, c)).find(|x| x.abs() > 1e-12);
        if lead.is_some_and(|x| x < 0.0) {
            for i in 0..res.right_vectors.rows() {
                let x = res.right_vectors.get(i, c);
                res.right_vectors.set(i, c, -x);
            }
            for i in 0..res.left_vectors.rows() {
                let x = res.left_vectors.get(i, c);
                res.left_vectors.set(i, c, -x);
            }
        }
    }
}
