//! Dense symmetric eigendecomposition via cyclic Jacobi rotations.
//!
//! The matrices in this crate are small (a few hundred rows at most) and
//! always symmetric, so a plain Jacobi sweep is accurate enough to back the
//! `<= 0` matrix conditions checked by the certifier.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;

/// Relative off-diagonal threshold at which the sweep stops.
const OFF_DIAG_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 100;

/// Symmetrizes `m` as `(M + M^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns. The input is symmetrized first; matrices that
/// deviate from symmetry by more than `1e-9` (scaled) or contain non-finite
/// entries are rejected.
pub fn sym_eig(matrix: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>), Error> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: matrix.ncols(),
        });
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let scale = matrix.amax().max(1.0);
    let asym = (matrix - matrix.transpose()).amax();
    if asym > 1e-9 * scale {
        return Err(Error::NotSymmetric { deviation: asym });
    }
    let mut a = symmetrize(matrix);
    let mut v = DMatrix::<f64>::identity(n, n);
    let frob = a.norm();
    let tol = OFF_DIAG_TOL * frob.max(f64::MIN_POSITIVE);

    for _sweep in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // rotation angle annihilating a[p,q]
                let theta = (aqq - app) / (2.0 * apq);
                let t = {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    // sort ascending
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap());
    let eigenvalues = DVector::from_iterator(n, idx.iter().map(|&i| a[(i, i)]));
    let mut eigenvectors = DMatrix::<f64>::zeros(n, n);
    for (col, &i) in idx.iter().enumerate() {
        eigenvectors.set_column(col, &v.column(i));
    }
    Ok((eigenvalues, eigenvectors))
}

/// Largest eigenvalue of a symmetric matrix. Empty matrices yield `-inf`
/// (every condition on a trivial space holds vacuously).
pub fn lambda_max(matrix: &DMatrix<f64>) -> Result<f64, Error> {
    if matrix.nrows() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let (vals, _) = sym_eig(matrix)?;
    Ok(vals[vals.len() - 1])
}

/// Orthonormal basis of the top eigenspace (all eigenvalues within `tol` of
/// the maximum). Used for subgradient selection when the top eigenvalue is
/// degenerate.
pub fn top_eigenspace(matrix: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>, Error> {
    let (vals, vecs) = sym_eig(matrix)?;
    let n = vals.len();
    let top = vals[n - 1];
    let first = (0..n).find(|&i| vals[i] >= top - tol).unwrap_or(n - 1);
    Ok(vecs.columns(first, n - first).into_owned())
}
