use crate::attention::config::AttentionWeights;
use crate::bench::counter;
use crate::error::{Error, Result};
use crate::linalg::LowRankFactors;
use crate::matrix::Matrix;
use crate::scalar::Real;

/// Full-length queries with principal keys and values.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalProjection<T = f64> {
    /// `U (Xp Wq)`, L x d'.
    pub q: Matrix<T>,
    /// `Xp Wk`, r x d'.
    pub kp: Matrix<T>,
    /// `Xp Wv`, r x d'.
    pub vp: Matrix<T>,
}

fn check_dim<T: Real>(dim: usize, weights: &AttentionWeights<T>) -> Result<()> {
    if dim != weights.model_dim() {
        return Err(Error::shape(format!("input width {dim} but weights expect {}", weights.model_dim())));
    }
    Ok(())
}

/// Project factors: `Kp = Xp Wk`, `Vp = Xp Wv`, `Q = U (Xp Wq)`.
pub fn project_qkv<T: Real>(
    factors: &LowRankFactors<T>,
    weights: &AttentionWeights<T>,
) -> Result<PrincipalProjection<T>> {
    check_dim(factors.dim(), weights)?;
    let q_principal = factors.xp.matmul(&weights.wq)?;
    counter::hold(q_principal.as_slice().len());
    let kp = factors.xp.matmul(&weights.wk)?;
    let vp = factors.xp.matmul(&weights.wv)?;
    let q = factors.u.matmul(&q_principal)?;
    counter::release(q_principal.as_slice().len());
    Ok(PrincipalProjection { q, kp, vp })
}

/// Dense `Q, K, V = X W` for the standard pipeline.
pub fn project_dense<T: Real>(
    x: &Matrix<T>,
    weights: &AttentionWeights<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
    check_dim(x.cols(), weights)?;
    Ok((x.matmul(&weights.wq)?, x.matmul(&weights.wk)?, x.matmul(&weights.wv)?))
}

/// `U^T K_full`: project full-length (for example rotated) keys onto the
/// span of an orthonormal basis.
pub fn project_rotated_keys<T: Real>(k_full: &Matrix<T>, u: &Matrix<T>, orthonormal: bool) -> Result<Matrix<T>> {
    if !orthonormal {
        return Err(Error::Precondition(
            "projection onto U needs orthonormal columns; reorthogonalize the factors first".into(),
        ));
    }
    if k_full.rows() != u.rows() {
        return Err(Error::shape(format!("keys have {} rows but the basis has {}", k_full.rows(), u.rows())));
    }
    u.matmul_transa(k_full)
}
