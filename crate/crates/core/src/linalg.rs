//! Small dense linear-algebra helpers shared by the estimator and models.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check on information matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Numerical rank: the number of singular values above
/// `max(rows, cols) · σ_max · ε`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 || !smax.is_finite() {
        return 0;
    }
    let tol = m.nrows().max(m.ncols()) as f64 * smax * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Cholesky factor of a symmetric positive definite matrix.
///
/// Symmetry is checked to [`SYMMETRY_TOL`] relative to the largest entry;
/// the factorization itself rejects matrices that are not positive definite.
pub fn spd_factor(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !m.is_square() {
        return Err(Error::dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("{what} (non-finite entries)")));
    }
    if !is_symmetric(m, SYMMETRY_TOL) {
        return Err(Error::NotPositiveDefinite(format!("{what} (asymmetric)")));
    }
    let sym = symmetrize(m);
    Cholesky::new(sym).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = spd_factor(m, what)?;
    Ok(symmetrize(&chol.inverse()))
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().cloned().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Builds a dense matrix from row vectors, checking that rows are rectangular.
pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::dimension(format!("{what} has no rows")));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::dimension(format!("{what} has no columns")));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::dimension(format!(
            "{what}: row {i} has {} entries, expected {ncols}",
            r.len()
        )));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("{what} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

/// Relative Frobenius distance `‖a − b‖_F / ‖b‖_F`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
