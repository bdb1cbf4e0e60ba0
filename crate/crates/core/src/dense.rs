//! Dense symmetric positive-definite solver.
//!
//! This is the full-storage baseline: an unblocked Cholesky factorization and
//! triangular substitution working on a plain `Array2<f64>`. It shares no code
//! with the band-storage path, which makes it usable both as the reference the
//! banded solver is checked against and as the "full" solver in benchmarks.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Lower Cholesky factor of a symmetric positive-definite matrix.
///
/// Returns the failing column index instead of a factor when a pivot is
/// non-positive, so callers can compare failure points across solvers.
pub fn cholesky(a: ArrayView2<'_, f64>) -> std::result::Result<Array2<f64>, usize> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "dense cholesky needs a square matrix");
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        // Off-diagonal entries of row j, then the pivot.
        for k in 0..j {
            let mut s = a[(j, k)];
            let (row_j, row_k) = (l.row(j), l.row(k));
            let (row_j, row_k) = (
                row_j.as_slice().expect("contiguous row"),
                row_k.as_slice().expect("contiguous row"),
            );
            for i in 0..k {
                s -= row_j[i] * row_k[i];
            }
            l[(j, k)] = s / l[(k, k)];
        }
        let mut d = a[(j, j)];
        {
            let row_j = l.row(j);
            let row_j = row_j.as_slice().expect("contiguous row");
            for i in 0..j {
                d -= row_j[i] * row_j[i];
            }
        }
        if !(d > 0.0) {
            return Err(j);
        }
        l[(j, j)] = d.sqrt();
    }
    Ok(l)
}

/// Solve `L Lᵀ x = b` given a lower factor from [`cholesky`].
pub fn solve_cholesky(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    assert_eq!(b.len(), n, "rhs length mismatch");
    let mut x = b.to_vec();
    // Forward: L y = b
    for i in 0..n {
        let row = l.row(i);
        let row = row.as_slice().expect("contiguous row");
        let mut s = x[i];
        for (k, xv) in x[..i].iter().enumerate() {
            s -= row[k] * xv;
        }
        x[i] = s / row[i];
    }
    // Backward: Lᵀ x = y
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// One-shot SPD solve; convenience over [`cholesky`] + [`solve_cholesky`].
pub fn solve_spd(a: ArrayView2<'_, f64>, b: &[f64]) -> Result<Vec<f64>> {
    let l = cholesky(a).map_err(|column| Error::NotPositiveDefinite {
        column,
        series: None,
    })?;
    Ok(solve_cholesky(&l, b))
}
