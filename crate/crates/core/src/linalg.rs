//! Small dense helpers on top of nalgebra. Everything here works on p×p or
//! N×q matrices with p, q in the single digits.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, WlError};

/// Relative eigenvalue threshold below which a symmetric matrix is treated as singular.
pub const SINGULAR_RTOL: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of a symmetric positive definite matrix.
///
/// On failure the error carries the eigenvector of the smallest eigenvalue.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym.clone());
    let (imin, &lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    let lmax = eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if !(lmin > SINGULAR_RTOL * lmax.max(f64::MIN_POSITIVE)) || !lmin.is_finite() {
        return Err(WlError::SingularInformation {
            direction: eig.eigenvectors.column(imin).iter().copied().collect(),
        });
    }
    match sym.clone().cholesky() {
        Some(ch) => Ok(symmetrize(&ch.inverse())),
        None => Err(WlError::SingularInformation {
            direction: eig.eigenvectors.column(imin).iter().copied().collect(),
        }),
    }
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `true` when every eigenvalue is ≥ `-tol * max(1, ‖m‖)`.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    let scale = m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    min_eigenvalue(m) >= -tol * scale
}

pub fn outer(v: &DVector<f64>) -> DMatrix<f64> {
    v * v.transpose()
}

/// Residuals of the column-wise least-squares regressions of `y` on `x` (no intercept).
///
/// Columns of `x` that are identically zero carry no information and are dropped
/// before the fit; any other rank deficiency is an error.
pub fn regression_residuals(y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    assert_eq!(y.nrows(), x.nrows(), "row mismatch");
    let keep: Vec<usize> = (0..x.ncols())
        .filter(|&j| x.column(j).iter().any(|v| *v != 0.0))
        .collect();
    if keep.is_empty() {
        return Ok(y.clone());
    }
    let x = x.select_columns(keep.iter());
    let nonzero_rows = (0..x.nrows())
        .filter(|&i| x.row(i).iter().any(|v| *v != 0.0))
        .count();
    if nonzero_rows < x.ncols() + 1 {
        return Err(WlError::RankDeficient(format!(
            "{} nonzero regressor rows for {} columns",
            nonzero_rows,
            x.ncols()
        )));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let rmax = r.diagonal().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if let Some(j) = r
        .diagonal()
        .iter()
        .position(|v| v.abs() <= 1e-10 * rmax.max(f64::MIN_POSITIVE))
    {
        return Err(WlError::RankDeficient(format!(
            "regressor column {} is a linear combination of the others",
            keep[j]
        )));
    }
    let q = qr.q();
    let fitted = &q * (q.transpose() * y);
    Ok(y - fitted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn inverse_of_spd() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = spd_inverse(&m).unwrap();
        let id = &m * &inv;
        assert_relative_eq!(id, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn singular_reports_null_direction() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match spd_inverse(&m) {
            Err(WlError::SingularInformation { direction }) => {
                assert_relative_eq!(direction[0].abs(), direction[1].abs(), epsilon = 1e-12);
                assert!(direction[0] * direction[1] < 0.0);
            }
            other => panic!("expected singular, got {other:?}"),
        }
    }

    #[test]
    fn residuals_are_orthogonal_to_regressors() {
        let x = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0, 1.0, 0.5, 0.0, 0.0]);
        let y = DMatrix::from_row_slice(5, 1, &[1.0, 2.0, 0.5, -1.0, 3.0]);
        let r = regression_residuals(&y, &x).unwrap();
        let ortho = x.transpose() * r;
        assert!(ortho.norm() < 1e-12);
    }

    #[test]
    fn zero_columns_are_dropped() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 0.0, 0.5, 0.0]);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(regression_residuals(&y, &x).is_ok());
    }

    #[test]
    fn collinear_columns_are_rejected() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 1.0, 2.0]);
        let y = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            regression_residuals(&y, &x),
            Err(WlError::RankDeficient(_))
        ));
    }
}
