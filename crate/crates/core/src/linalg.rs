//! Small dense symmetric solves for the scale refinement.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

/// Pseudo-inverse of a symmetric positive semi-definite matrix, via its
/// eigendecomposition. Returns the pseudo-inverse and the numerical rank.
pub(crate) fn psd_pinv(gram: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = gram.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    let eig = SymmetricEigen::new(gram.clone());
    let largest = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = largest * RANK_TOL;
    let mut pinv = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff && lambda > 0.0 {
            rank += 1;
            let q = eig.eigenvectors.column(k);
            pinv += (q * q.transpose()) / lambda;
        }
    }
    (pinv, rank)
}

/// Minimum-norm solution of `gram · x = rhs`.
pub(crate) fn min_norm_solve(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let (pinv, _) = psd_pinv(gram);
    pinv * rhs
}
