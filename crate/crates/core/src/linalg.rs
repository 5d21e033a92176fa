//! Small dense complex linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-10;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Largest entrywise deviation |m - m†|.
pub fn hermitian_asymmetry(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// (m + m†)/2
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Eigen-decomposition of a Hermitian matrix. Eigenvalues are returned in the
/// order produced by the solver together with the unitary of eigenvectors.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = hermitian_part(m).symmetric_eigen();
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    hermitian_part(m).symmetric_eigenvalues().iter().copied().collect()
}

/// Validates that `m` is square, Hermitian within [`HERMITIAN_TOL`] and positive
/// semidefinite within [`PSD_TOL`]. Returns the eigenvalues.
pub fn check_hermitian_psd(m: &CMatrix) -> Result<Vec<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let asym = hermitian_asymmetry(m);
    if asym > HERMITIAN_TOL * (1.0 + m.norm()) {
        return Err(Error::NotHermitian { asymmetry: asym });
    }
    let ev = hermitian_eigenvalues(m);
    if let Some(&bad) = ev.iter().find(|&&e| e < -PSD_TOL) {
        return Err(Error::NotPositive { eigenvalue: bad });
    }
    Ok(ev)
}

/// U f(Λ) U† for Hermitian `m`.
pub fn hermitian_map(m: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let d = CMatrix::from_diagonal(&CVector::from_iterator(vals.len(), vals.iter().map(|&v| c(f(v), 0.0))));
    &vecs * d * vecs.adjoint()
}

pub fn inverse(m: &CMatrix) -> Result<CMatrix> {
    m.clone().try_inverse().ok_or(Error::SingularSignal { eigenvalue: 0.0 })
}

/// Determinant of a Hermitian positive-definite matrix as a real number.
pub fn det_hermitian(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).iter().product()
}

pub fn ln_det_hermitian(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).iter().map(|v| v.ln()).sum()
}

/// Spectral (operator 2-) norm.
pub fn op_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().fold(0.0f64, |acc, &s| acc.max(s))
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

pub fn is_diagonal(m: &CMatrix, tol: f64) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)].norm() <= tol))
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn real_diag(values: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_iterator(values.len(), values.iter().map(|&v| c(v, 0.0))))
}

/// v† M w
pub fn quad_form(v: &CVector, m: &CMatrix, w: &CVector) -> C64 {
    v.dotc(&(m * w))
}

pub fn to_cvector(values: &[C64]) -> CVector {
    CVector::from_column_slice(values)
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}
