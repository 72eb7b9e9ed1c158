//! Small dense linear-algebra helpers shared by the model, estimation and
//! oracle modules.
//!
//! Inverses are taken through Cholesky solves wherever a formula allows it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Absolute symmetry tolerance (scaled by the largest entry when that exceeds 1).
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Covariances whose spectral condition number exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Returns `(a + a') / 2`.
pub fn symmetrized(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

fn scale_of(a: &Mat) -> f64 {
    a.amax().max(1.0)
}

pub fn is_symmetric(a: &Mat) -> bool {
    a.is_square() && (a - a.transpose()).amax() <= SYMMETRY_TOL * scale_of(a)
}

/// Validate a covariance that must be symmetric positive definite and
/// reasonably conditioned.
pub fn check_spd(a: &Mat, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Config(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("{what} has non-finite entries")));
    }
    if !is_symmetric(a) {
        return Err(Error::Config(format!("{what} is not symmetric")));
    }
    let eig = symmetrized(a).symmetric_eigenvalues();
    let lo = eig.min();
    let hi = eig.max();
    if lo <= 0.0 {
        return Err(Error::numeric(format!(
            "{what} is not positive definite (smallest eigenvalue {lo:e})"
        )));
    }
    if hi / lo > MAX_CONDITION {
        return Err(Error::numeric(format!(
            "{what} is near-singular (condition number {:e})",
            hi / lo
        )));
    }
    Ok(())
}

/// Validate a symmetric positive semi-definite matrix.
pub fn check_psd(a: &Mat, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Config(format!("{what} must be square")));
    }
    if !is_symmetric(a) {
        return Err(Error::Config(format!("{what} is not symmetric")));
    }
    let lo = symmetrized(a).symmetric_eigenvalues().min();
    if lo < -SYMMETRY_TOL * scale_of(a) {
        return Err(Error::numeric(format!(
            "{what} is not positive semi-definite (smallest eigenvalue {lo:e})"
        )));
    }
    Ok(())
}

/// Solve `a x = b` for symmetric positive definite `a`.
pub fn spd_solve(a: &Mat, b: &Mat) -> Result<Mat> {
    let chol = symmetrized(a)
        .cholesky()
        .ok_or_else(|| Error::numeric("Cholesky factorization failed"))?;
    Ok(chol.solve(b))
}

pub fn spd_solve_vec(a: &Mat, b: &Vector) -> Result<Vector> {
    let chol = symmetrized(a)
        .cholesky()
        .ok_or_else(|| Error::numeric("Cholesky factorization failed"))?;
    Ok(chol.solve(b))
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn spd_inverse(a: &Mat) -> Result<Mat> {
    let chol = symmetrized(a)
        .cholesky()
        .ok_or_else(|| Error::numeric("Cholesky factorization failed"))?;
    Ok(symmetrized(&chol.inverse()))
}

/// A square root `L` with `L L' = cov`.
///
/// Cholesky for positive definite input; for singular positive semi-definite
/// input falls back to `V diag(sqrt(max(λ, 0)))` from the symmetric
/// eigendecomposition.
pub fn covariance_factor(cov: &Mat) -> Result<Mat> {
    let sym = symmetrized(cov);
    if let Some(chol) = sym.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = sym.symmetric_eigen();
    let floor = -SYMMETRY_TOL * scale_of(cov);
    if eig.eigenvalues.iter().any(|&l| l < floor) {
        return Err(Error::numeric(
            "covariance is not positive semi-definite; cannot factor",
        ));
    }
    let mut factor = eig.eigenvectors;
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    Ok(factor)
}

/// `||a - b||_F / ||b||_F` (absolute when `b` is zero).
pub fn rel_frobenius(a: &Mat, b: &Mat) -> f64 {
    let diff = (a - b).norm();
    let base = b.norm();
    if base == 0.0 {
        diff
    } else {
        diff / base
    }
}

pub fn rel_vec(a: &Vector, b: &Vector) -> f64 {
    let diff = (a - b).norm();
    let base = b.norm();
    if base == 0.0 {
        diff
    } else {
        diff / base
    }
}

/// Block-diagonal matrix from square or rectangular blocks.
pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// True when `b - a` is positive semi-definite up to `tol` (scaled).
pub fn psd_le(a: &Mat, b: &Mat, tol: f64) -> bool {
    let d = symmetrized(&(b - a));
    d.symmetric_eigenvalues().min() >= -tol * scale_of(b)
}

/// Product `a · b · a'`, symmetrized.
pub fn congruence(a: &Mat, b: &Mat) -> Mat {
    symmetrized(&(a * b * a.transpose()))
}
