//! Small dense linear-algebra helpers on top of nalgebra.

use alloc::format;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Average `m` with its transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Reciprocal condition number of `m` after scaling it to unit diagonal.
///
/// Returns 0 when a diagonal entry is not strictly positive.
pub fn equilibrated_rcond(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 1.0;
    }
    let mut scale = DVector::zeros(n);
    for i in 0..n {
        let d = m[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return 0.0;
        }
        scale[i] = 1.0 / d.sqrt();
    }
    let mut s = m.clone();
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] *= scale[i] * scale[j];
        }
    }
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) {
        return 0.0;
    }
    (min / max).max(0.0)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{}x{} matrix is not positive definite", m.nrows(), m.ncols())))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// General square inverse (LU), for matrices that need not be positive definite.
pub fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{}x{} matrix is singular", m.nrows(), m.ncols())))
}

/// Symmetric square-root factor `F` with `F Fᵀ = cov`, clipping negative eigenvalues to 0.
pub fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = cov.clone();
    symmetrize(&mut c);
    let eig = c.symmetric_eigen();
    let mut q = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let root = lambda.max(0.0).sqrt();
        for i in 0..q.nrows() {
            q[(i, j)] *= root;
        }
    }
    q
}

/// Draw from Normal(mean, F Fᵀ).
pub fn mvn_draw<R: Rng + ?Sized>(mean: &DVector<f64>, factor: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_iterator(factor.ncols(), (0..factor.ncols()).map(|_| StandardNormal.sample(rng)));
    mean + factor * z
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut c = m.clone();
    symmetrize(&mut c);
    c.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}
