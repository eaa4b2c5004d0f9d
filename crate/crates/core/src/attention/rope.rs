use crate::bench::counter;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

/// Rotate each row pairwise: coordinates `(2t, 2t+1)` of row `i` turn by
/// `positions[i] * base^(-2t/width)`.
pub fn apply_rope<T: Real>(m: &Matrix<T>, positions: &[usize], base: f64) -> Result<Matrix<T>> {
    apply_rope_heads(m, positions, base, 1)
}

/// Rotary encoding applied independently within each of `heads` column blocks.
pub fn apply_rope_heads<T: Real>(m: &Matrix<T>, positions: &[usize], base: f64, heads: usize) -> Result<Matrix<T>> {
    let (rows, cols) = m.shape();
    if heads == 0 || cols % heads != 0 {
        return Err(Error::invalid(format!("{heads} heads do not divide width {cols}")));
    }
    let width = cols / heads;
    if !width.is_multiple_of(2) {
        return Err(Error::invalid(format!("rotary encoding needs an even width, got {width}")));
    }
    if positions.len() != rows {
        return Err(Error::shape(format!("{} positions for {rows} rows", positions.len())));
    }
    if !(base > 0.0 && base.is_finite()) {
        return Err(Error::invalid(format!("rotary base must be positive, got {base}")));
    }
    let freqs: Vec<f64> = (0..width / 2).map(|t| base.powf(-2.0 * t as f64 / width as f64)).collect();
    let mut out = m.clone();
    for (i, &pos) in positions.iter().enumerate() {
        let row = out.row_mut(i);
        for (t, &f) in freqs.iter().enumerate() {
            let (sin, cos) = (pos as f64 * f).sin_cos();
            let (sin, cos) = (T::lit(sin), T::lit(cos));
            for h in 0..heads {
                let a = h * width + 2 * t;
                let (x, y) = (row[a], row[a + 1]);
                row[a] = x * cos - y * sin;
                row[a + 1] = x * sin + y * cos;
            }
        }
    }
    counter::elementwise(3 * rows * cols);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_positions_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m: Matrix = Matrix::random_normal(4, 6, &mut rng);
        assert_eq!(apply_rope(&m, &[0; 4], DEFAULT_ROPE_BASE).unwrap(), m);
    }

    #[test]
    fn quarter_turn() {
        // Pair t = 1 of a width-4 row turns by base^(-1/2); base = (2/pi)^2
        // makes that pi/2.
        let base = (1.0 / FRAC_PI_2).powi(2);
        let m: Matrix = Matrix::new(1, 4, vec![0.0, 0.0, 3.0, -2.0]).unwrap();
        let out = apply_rope(&m, &[1], base).unwrap();
        assert!((out.get(0, 2) - 2.0).abs() < 1e-12);
        assert!((out.get(0, 3) - 3.0).abs() < 1e-12);
        // Pair t = 0 always turns by the position itself.
        let m: Matrix = Matrix::new(1, 2, vec![3.0, -2.0]).unwrap();
        let x = apply_rope(&m, &[1], DEFAULT_ROPE_BASE).unwrap();
        let (s, c) = 1f64.sin_cos();
        assert!((x.get(0, 0) - (3.0 * c + 2.0 * s)).abs() < 1e-15);
    }

    #[test]
    fn norms_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m: Matrix = Matrix::random_normal(16, 8, &mut rng);
        let positions: Vec<usize> = (0..16).map(|i| i * 7).collect();
        let out = apply_rope_heads(&m, &positions, DEFAULT_ROPE_BASE, 2).unwrap();
        for i in 0..16 {
            let a: f64 = m.row(i).iter().map(|x| x * x).sum();
            let b: f64 = out.row(i).iter().map(|x| x * x).sum();
            assert!((a.sqrt() - b.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn per_head_matches_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m: Matrix = Matrix::random_normal(5, 8, &mut rng);
        let pos = [0, 1, 2, 3, 4];
        let whole = apply_rope_heads(&m, &pos, 100.0, 2).unwrap();
        for h in 0..2 {
            let block = apply_rope(&m.column_block(4 * h, 4), &pos, 100.0).unwrap();
            assert_eq!(whole.column_block(4 * h, 4), block);
        }
    }

    #[test]
    fn odd_width_rejected() {
        let m = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(apply_rope(&m, &[0, 1], DEFAULT_ROPE_BASE), Err(Error::InvalidInput(_))));
        assert!(apply_rope(&Matrix::<f64>::zeros(2, 2), &[0], DEFAULT_ROPE_BASE).is_err());
    }
}
