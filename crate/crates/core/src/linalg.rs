//! Small dense linear-algebra helpers on top of nalgebra.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

/// Eigenvalues with those below `rel * λmax` (in absolute terms) clipped to zero.
pub fn clipped_eigen(m: &DMatrix<f64>, rel: f64) -> (DVector<f64>, DMatrix<f64>) {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cut = rel * lmax;
    let vals = eig.eigenvalues.map(|l| if l > cut { l } else { 0.0 });
    (vals, eig.eigenvectors)
}

/// Symmetric PSD square root by eigendecomposition with clipping at `1e-10·λmax`.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = clipped_eigen(m, 1e-10);
    let d = DMatrix::from_diagonal(&vals.map(f64::sqrt));
    let mut r = &vecs * d * vecs.transpose();
    symmetrize(&mut r);
    r
}

/// Nearest correlation matrix by eigenvalue clipping followed by unit-diagonal rescaling.
/// Returns the repaired matrix and whether a repair was needed.
pub fn nearest_correlation(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min >= -1e-12 {
        return (s, false);
    }
    let vals = eig.eigenvalues.map(|l| l.max(0.0));
    let r = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let d: Vec<f64> = (0..r.nrows()).map(|i| r[(i, i)].max(1e-300).sqrt()).collect();
    let mut out = DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| r[(i, j)] / (d[i] * d[j]));
    symmetrize(&mut out);
    for i in 0..out.nrows() {
        out[(i, i)] = 1.0;
    }
    (out, true)
}

/// Solves a symmetric positive definite system, falling back to LU.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::NumericDomain("singular matrix in linear solve".into()))
}

/// Inverse of a symmetric positive definite matrix with a ridge retry.
/// Returns the inverse and the ridge that was needed (0 when none).
pub fn inverse_spd_ridged(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let m = a + DMatrix::identity(n, n) * ridge;
        if let Some(ch) = m.cholesky() {
            let mut inv = ch.inverse();
            symmetrize(&mut inv);
            return Ok((inv, ridge));
        }
        ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 10.0 };
    }
    Err(Error::NumericDomain("matrix is not positive definite even after ridge regularization".into()))
}

/// Ordinary least squares via QR; returns coefficients and residual sum of squares.
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<(DVector<f64>, f64)> {
    let yv = DVector::from_column_slice(y);
    let xtx = x.transpose() * x;
    let xty = x.transpose() * &yv;
    let beta = xtx
        .cholesky()
        .ok_or_else(|| Error::Input("design matrix is not of full column rank".into()))?
        .solve(&xty);
    let resid = yv - x * &beta;
    Ok((beta, resid.norm_squared()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_squares_back() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let s = sqrt_psd(&a);
        assert!((&s * &s - &a).abs().max() < 1e-12);
    }

    #[test]
    fn nearest_correlation_repairs_indefinite() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        let (r, repaired) = nearest_correlation(&a);
        assert!(repaired);
        let min = SymmetricEigen::new(r.clone()).eigenvalues.min();
        assert!(min > -1e-10);
        for i in 0..3 {
            assert_eq!(r[(i, i)], 1.0);
        }
    }
}
