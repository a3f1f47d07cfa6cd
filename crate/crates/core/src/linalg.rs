//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

/// Largest eigenvalue of a symmetric matrix together with a unit eigenvector.
pub fn max_eig(a: &DMatrix<f64>) -> (f64, nalgebra::DVector<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let (idx, val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    (val, eig.eigenvectors.column(idx).into_owned())
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return f64::NEG_INFINITY;
    }
    SymmetricEigen::new(a.clone()).eigenvalues.max()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return f64::INFINITY;
    }
    SymmetricEigen::new(a.clone()).eigenvalues.min()
}

/// Spectral norm.
pub fn norm2(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// `a + aᵀ`.
pub fn sym2(a: &DMatrix<f64>) -> DMatrix<f64> {
    a + a.transpose()
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut at = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((at, at), (k, k)).copy_from(b);
        at += k;
    }
    out
}

/// Principal submatrix keeping the given row/column indices.
pub fn principal(a: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(keep.len(), keep.len(), |i, j| a[(keep[i], keep[j])])
}

/// Kronecker product `a ⊗ I₂`.
pub fn kron_i2(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = a.ncols();
    let mut out = DMatrix::zeros(2 * n, 2 * m);
    for i in 0..n {
        for j in 0..m {
            out[(2 * i, 2 * j)] = a[(i, j)];
            out[(2 * i + 1, 2 * j + 1)] = a[(i, j)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extreme_eigenvalues_of_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-3.0, 1.0, 2.5]));
        assert_eq!(lambda_max(&a), 2.5);
        assert_eq!(lambda_min(&a), -3.0);
        let (v, vec) = max_eig(&a);
        assert_eq!(v, 2.5);
        assert!((vec[2].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kron_places_copies_on_the_diagonal_of_each_block() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let k = kron_i2(&a);
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 1)], 1.0);
        assert_eq!(k[(0, 1)], 0.0);
        assert_eq!(k[(0, 2)], -1.0);
        assert_eq!(k[(1, 3)], -1.0);
    }
}
