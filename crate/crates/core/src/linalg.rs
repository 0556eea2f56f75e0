//! Small dense helpers on slices. Matrices are row-major.

use nalgebra::{DMatrix, SymmetricEigen};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest eigenvalue of a symmetric `n × n` matrix.
pub fn symmetric_max_eigenvalue(m: &[f64], n: usize) -> f64 {
    debug_assert_eq!(m.len(), n * n);
    match n {
        1 => m[0],
        2 => {
            let (a, b, d) = (m[0], 0.5 * (m[1] + m[2]), m[3]);
            let half_trace = 0.5 * (a + d);
            let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            half_trace + disc
        }
        _ => {
            let mat = DMatrix::from_row_slice(n, n, m);
            SymmetricEigen::new(mat)
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        }
    }
}

/// Smallest eigenvalue of a symmetric `n × n` matrix.
pub fn symmetric_min_eigenvalue(m: &[f64], n: usize) -> f64 {
    let neg: Vec<f64> = m.iter().map(|v| -v).collect();
    -symmetric_max_eigenvalue(&neg, n)
}

/// Spectral norm (largest singular value) of a row-major `rows × cols` matrix.
pub fn spectral_norm(m: &[f64], rows: usize, cols: usize) -> f64 {
    debug_assert_eq!(m.len(), rows * cols);
    // Gram matrix MᵀM
    let mut gram = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in i..cols {
            let mut s = 0.0;
            for r in 0..rows {
                s += m[r * cols + i] * m[r * cols + j];
            }
            gram[i * cols + j] = s;
            gram[j * cols + i] = s;
        }
    }
    symmetric_max_eigenvalue(&gram, cols).max(0.0).sqrt()
}

/// Inverse of a square row-major matrix, `None` when singular.
pub fn inverse(m: &[f64], n: usize) -> Option<Vec<f64>> {
    let mat = DMatrix::from_row_slice(n, n, m);
    let inv = mat.try_inverse()?;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inv[(i, j)];
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spectral_norm_matches_nalgebra_svd() {
        let m = [1.0, 2.0, -0.5, 3.0, 0.25, -1.5, 0.0, 4.0, 2.0];
        let expected = DMatrix::from_row_slice(3, 3, &m).singular_values().max();
        assert_relative_eq!(spectral_norm(&m, 3, 3), expected, max_relative = 1e-12);

        let m2 = [0.0, 1.0, -3.16, -4.04];
        let expected = DMatrix::from_row_slice(2, 2, &m2).singular_values().max();
        assert_relative_eq!(spectral_norm(&m2, 2, 2), expected, max_relative = 1e-12);
    }

    #[test]
    fn symmetric_eigenvalues_2x2() {
        let p = [1.278, 0.316, 0.316, 0.404];
        let max = symmetric_max_eigenvalue(&p, 2);
        let min = symmetric_min_eigenvalue(&p, 2);
        assert_relative_eq!(max + min, 1.682, max_relative = 1e-12);
        assert_relative_eq!(max * min, 1.278 * 0.404 - 0.316 * 0.316, max_relative = 1e-12);
    }

    #[test]
    fn inverse_roundtrip() {
        let m = [2.0, 1.0, 1.0, 3.0];
        let inv = inverse(&m, 2).unwrap();
        assert_relative_eq!(inv[0], 0.6, max_relative = 1e-12);
        assert_relative_eq!(inv[1], -0.2, max_relative = 1e-12);
        assert!(inverse(&[1.0, 2.0, 2.0, 4.0], 2).is_none());
    }
}
