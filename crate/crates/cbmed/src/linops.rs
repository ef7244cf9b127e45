//! Shared dense linear algebra: symmetric positive-definite solves with a
//! ridge fallback, and least squares via the normal equations.
//!
//! Everything here works at desk scale (K up to the low hundreds), so a
//! Cholesky-first strategy is enough; there is no sparse or iterative path.

use nalgebra::{Cholesky, DMatrix, Dyn};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum LinopsError {
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix could not be factorized even after ridge regularization")]
    SingularAfterRidge,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Diagnostics attached to an SPD solve.
#[derive(Debug, Clone, Default)]
pub struct SolveDiagnostics {
    pub ridge_applied: bool,
    /// Ridge value actually added to the diagonal (0 when none).
    pub ridge_value: f64,
    /// Rough condition estimate from the Cholesky diagonal, `(max/min)^2`.
    pub condition_estimate: f64,
    pub residual_norm: f64,
}

fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..a.ncols() {
        for i in (j + 1)..a.nrows() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

fn cholesky_condition(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..l.nrows() {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).powi(2)
    }
}

/// Factorization of `A + lambda I` obtained by `spd_cholesky`; reusable across
/// many right-hand sides.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    pub diagnostics: SolveDiagnostics,
}

impl SpdFactor {
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vector(&self, b: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        self.chol.solve(b)
    }
}

/// Cholesky-factorize a symmetric matrix, adding `ridge_floor * trace / dim`
/// to the diagonal (escalating by 100x, a few times) if the plain
/// factorization fails.
pub fn spd_cholesky(a: &DMatrix<f64>, ridge_floor: f64) -> Result<SpdFactor, LinopsError> {
    let dim = a.nrows();
    if dim != a.ncols() {
        return Err(LinopsError::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let asym = max_asymmetry(a);
    if asym > 1e-10 * scale {
        return Err(LinopsError::NotSymmetric(asym));
    }

    if let Some(chol) = Cholesky::new(a.clone()) {
        let condition_estimate = cholesky_condition(&chol);
        return Ok(SpdFactor {
            chol,
            diagnostics: SolveDiagnostics {
                ridge_applied: false,
                ridge_value: 0.0,
                condition_estimate,
                residual_norm: 0.0,
            },
        });
    }

    let trace: f64 = a.diagonal().iter().sum();
    let base = ridge_floor.max(f64::EPSILON) * trace.abs().max(1.0) / dim as f64;
    let mut lambda = base;
    for _ in 0..8 {
        let mut ridged = a.clone();
        for i in 0..dim {
            ridged[(i, i)] += lambda;
        }
        if let Some(chol) = Cholesky::new(ridged) {
            let condition_estimate = cholesky_condition(&chol);
            return Ok(SpdFactor {
                chol,
                diagnostics: SolveDiagnostics {
                    ridge_applied: true,
                    ridge_value: lambda,
                    condition_estimate,
                    residual_norm: 0.0,
                },
            });
        }
        lambda *= 100.0;
    }
    Err(LinopsError::SingularAfterRidge)
}

/// Solve `(A + lambda I) X = B` for symmetric `A`, with `lambda = 0` when the
/// plain Cholesky succeeds and the ridge fallback otherwise.
pub fn solve_spd(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    ridge_floor: f64,
) -> Result<(DMatrix<f64>, SolveDiagnostics), LinopsError> {
    if b.nrows() != a.nrows() {
        return Err(LinopsError::DimensionMismatch(format!(
            "rhs has {} rows, matrix has {}",
            b.nrows(),
            a.nrows()
        )));
    }
    let factor = spd_cholesky(a, ridge_floor)?;
    let x = factor.solve_matrix(b);
    let mut diagnostics = factor.diagnostics;
    let mut resid = a * &x - b;
    if diagnostics.ridge_applied {
        resid += diagnostics.ridge_value * &x;
    }
    diagnostics.residual_norm = resid.norm();
    Ok((x, diagnostics))
}

/// Least squares `argmin ||design * C - response||_F` via the normal
/// equations; `response` may have several columns.
pub fn least_squares(
    design: &DMatrix<f64>,
    response: &DMatrix<f64>,
    ridge_floor: f64,
) -> Result<(DMatrix<f64>, SolveDiagnostics), LinopsError> {
    if design.nrows() != response.nrows() {
        return Err(LinopsError::DimensionMismatch(format!(
            "design has {} rows, response has {}",
            design.nrows(),
            response.nrows()
        )));
    }
    let gram = design.transpose() * design;
    let rhs = design.transpose() * response;
    solve_spd(&gram, &rhs, ridge_floor)
}

/// Default ridge floor used across the crate when a Gram matrix turns out to
/// be numerically singular.
pub const RIDGE_FLOOR: f64 = 1e-10;

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn identity_solve() {
        let a = DMatrix::<f64>::identity(3, 3);
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let (x, diag) = solve_spd(&a, &b, RIDGE_FLOOR).unwrap();
        assert_eq!(x[(0, 0)], 1.0);
        assert_eq!(x[(1, 0)], 0.0);
        assert!(!diag.ridge_applied);
    }

    #[test]
    fn two_by_two_known_inverse() {
        // A = [[2, 1], [1, 3]], inv = [[3, -1], [-1, 2]] / 5
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let (x, _) = solve_spd(&a, &b, RIDGE_FLOOR).unwrap();
        // x = inv(A) b = [(3 - 2)/5, (-1 + 4)/5] = [0.2, 0.6]
        assert!((x[(0, 0)] - 0.2).abs() < 1e-12);
        assert!((x[(1, 0)] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_gets_ridge() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let (x, diag) = solve_spd(&a, &b, RIDGE_FLOOR).unwrap();
        assert!(diag.ridge_applied);
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let b = DMatrix::zeros(2, 1);
        assert!(matches!(
            solve_spd(&a, &b, RIDGE_FLOOR),
            Err(LinopsError::NotSymmetric(_))
        ));
    }

    #[test]
    fn constant_regression() {
        let design = DMatrix::from_element(3, 1, 1.0);
        let response = DMatrix::from_element(3, 1, 2.0);
        let (c, _) = least_squares(&design, &response, RIDGE_FLOOR).unwrap();
        assert!((c[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn response_in_span_reproduced() {
        let design = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let truth = DVector::from_column_slice(&[0.5, -1.25]);
        let response = DMatrix::from_column_slice(4, 1, (&design * &truth).as_slice());
        let (c, _) = least_squares(&design, &response, RIDGE_FLOOR).unwrap();
        let resid = (&design * &c - &response).norm();
        assert!(resid < 1e-10);
    }

    #[test]
    fn overdetermined_matches_hand_pseudoinverse() {
        // design 3x2, worked by hand: X = [[1,0],[1,1],[1,2]], y = (1, 0, 2).
        // X'X = [[3,3],[3,5]], X'y = (3, 4); inv(X'X) = [[5,-3],[-3,3]]/6.
        // c = ([15-12]/6, [-9+12]/6) = (0.5, 0.5)
        let design = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let response = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 2.0]);
        let (c, _) = least_squares(&design, &response, RIDGE_FLOOR).unwrap();
        assert!((c[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((c[(1, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fitted_values_invariant_to_reparameterization() {
        // Replace columns by an invertible linear combination; fitted values
        // must not move.
        let design = DMatrix::from_row_slice(5, 2, &[1.0, -2.0, 1.0, -1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let response = DMatrix::from_column_slice(5, 1, &[3.0, 1.0, 0.5, -0.25, 2.0]);
        let (c1, _) = least_squares(&design, &response, RIDGE_FLOOR).unwrap();
        let fitted1 = &design * &c1;

        let t = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, -1.0, 2.0]);
        let design2 = &design * &t;
        let (c2, _) = least_squares(&design2, &response, RIDGE_FLOOR).unwrap();
        let fitted2 = &design2 * &c2;
        assert!((fitted1 - fitted2).norm() < 1e-8);
    }
}
