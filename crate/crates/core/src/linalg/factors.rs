use serde::{Deserialize, Serialize};

use crate::bench::counter;
use crate::error::{Error, Result};
use crate::linalg::svd::{exact_svd, SvdResult};
use crate::matrix::Matrix;
use crate::scalar::{dot, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorMethod {
    ExactTruncated,
    Alternating,
}

/// `X ~ U * Xp` with `U: L x r` and `Xp: r x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors<T = f64> {
    pub u: Matrix<T>,
    /// Rows are the principal components with singular values folded in.
    pub xp: Matrix<T>,
    pub orthonormal: bool,
    pub method: FactorMethod,
}

pub(crate) const ORTHONORMAL_TOL: f64 = 1e-8;
const COLLAPSE_TOL: f64 = 1e-12;

impl<T: Real> LowRankFactors<T> {
    pub fn new(u: Matrix<T>, xp: Matrix<T>, method: FactorMethod) -> Result<Self> {
        if u.cols() != xp.rows() {
            return Err(Error::shape(format!("U is {}x{} but Xp is {}x{}", u.rows(), u.cols(), xp.rows(), xp.cols())));
        }
        if u.cols() > u.rows().min(xp.cols()) {
            return Err(Error::invalid(format!("rank {} exceeds min({}, {})", u.cols(), u.rows(), xp.cols())));
        }
        let orthonormal = u.orthonormality_defect().as_f64() <= ORTHONORMAL_TOL;
        Ok(Self { u, xp, orthonormal, method })
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn length(&self) -> usize {
        self.u.rows()
    }

    pub fn dim(&self) -> usize {
        self.xp.cols()
    }

    pub fn reconstruct(&self) -> Matrix<T> {
        counter::uncounted(|| self.u.matmul(&self.xp)).expect("factor shapes checked at construction")
    }
}

/// Best rank-`r` approximation from a full SVD: `U` holds the leading left
/// singular vectors, `Xp` rows are `sigma_i v_i^T`.
pub fn exact_truncation(x: &Matrix, r: usize) -> Result<LowRankFactors> {
    let svd = exact_svd(x)?;
    truncate_svd(&svd, r)
}

pub fn truncate_svd(svd: &SvdResult, r: usize) -> Result<LowRankFactors> {
    let m = svd.singular_values.len();
    if r == 0 || r > m {
        return Err(Error::invalid(format!("rank {r} outside 1..={m}")));
    }
    let u = svd.left_vectors.column_block(0, r);
    let d = svd.right_vectors.rows();
    let xp = Matrix::from_fn(r, d, |i, j| svd.singular_values[i] * svd.right_vectors.get(j, i));
    Ok(LowRankFactors { u, xp, orthonormal: true, method: FactorMethod::ExactTruncated })
}

/// Replace `U` by an orthonormal basis of its column space (modified
/// Gram-Schmidt, two passes) and fold the triangular factor into `Xp`, so
/// that `U_new * Xp_new = U * Xp`.
pub fn reorthogonalize<T: Real>(factors: &LowRankFactors<T>) -> Result<LowRankFactors<T>> {
    let (l, r) = factors.u.shape();
    let mut q: Vec<Vec<T>> = (0..r).map(|c| factors.u.column(c)).collect();
    // R is upper triangular, r x r.
    let mut rmat = vec![T::zero(); r * r];
    for j in 0..r {
        let original = dot(&q[j], &q[j]).sqrt();
        for _pass in 0..2 {
            for i in 0..j {
                let (head, tail) = q.split_at_mut(j);
                let proj = dot(&head[i], &tail[0]);
                rmat[i * r + j] += proj;
                for (x, &y) in tail[0].iter_mut().zip(&head[i]) {
                    *x -= proj * y;
                }
            }
        }
        let nrm = dot(&q[j], &q[j]).sqrt();
        if !(nrm > T::zero()) || nrm <= T::lit(COLLAPSE_TOL) * original {
            return Err(Error::RankDeficient { column: j });
        }
        rmat[j * r + j] = nrm;
        q[j].iter_mut().for_each(|x| *x /= nrm);
    }
    let u = Matrix::from_fn(l, r, |i, c| q[c][i]);
    let rmat = Matrix::from_vec_unchecked(r, r, rmat);
    let xp = rmat.matmul(&factors.xp)?;
    Ok(LowRankFactors { u, xp, orthonormal: true, method: factors.method })
}

/// Captured energy `||Xp||_F^2 / ||X||_F^2` for orthonormal factors, and
/// `||U Xp||_F^2 / ||X||_F^2` otherwise.
pub fn energy_ratio<T: Real>(x: &Matrix<T>, factors: &LowRankFactors<T>) -> Result<f64> {
    if factors.u.rows() != x.rows() || factors.xp.cols() != x.cols() {
        return Err(Error::shape(format!(
            "factors reconstruct {}x{}, source is {}x{}",
            factors.u.rows(),
            factors.xp.cols(),
            x.rows(),
            x.cols()
        )));
    }
    let total = x.frobenius_sq().as_f64();
    if !(total > 0.0) {
        return Err(Error::Degenerate("source matrix has zero norm".into()));
    }
    let kept = if factors.orthonormal {
        factors.xp.frobenius_sq().as_f64()
    } else {
        factors.reconstruct().frobenius_sq().as_f64()
    };
    Ok(kept / total)
}
