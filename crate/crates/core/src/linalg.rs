//! Small dense matrix helpers: vec/vech, the duplication matrix and
//! positive-definite projections. Everything here operates on tiny matrices
//! (parameter-block sizes), so clarity wins over cleverness.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VbilError};

/// Half-vectorization: stacks the columns of the lower triangle of `a`
/// (including the diagonal). `a` is assumed symmetric.
pub fn vech(a: &DMatrix<f64>) -> DVector<f64> {
    let d = a.nrows();
    debug_assert_eq!(d, a.ncols());
    let mut out = DVector::zeros(d * (d + 1) / 2);
    let mut idx = 0;
    for j in 0..d {
        for i in j..d {
            out[idx] = a[(i, j)];
            idx += 1;
        }
    }
    out
}

/// Inverse of [`vech`]: rebuilds the symmetric `d x d` matrix.
pub fn unvech(v: &DVector<f64>, d: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), d * (d + 1) / 2);
    let mut out = DMatrix::zeros(d, d);
    let mut idx = 0;
    for j in 0..d {
        for i in j..d {
            out[(i, j)] = v[idx];
            out[(j, i)] = v[idx];
            idx += 1;
        }
    }
    out
}

/// Column-major index of entry `(i, j)` inside `vec(A)` for a `d x d` matrix.
#[inline]
fn vec_index(i: usize, j: usize, d: usize) -> usize {
    j * d + i
}

/// Index of entry `(i, j)`, `i >= j`, inside `vech(A)`.
#[inline]
pub fn vech_index(i: usize, j: usize, d: usize) -> usize {
    debug_assert!(i >= j);
    // offset of column j = d + (d-1) + ... + (d-j+1)
    j * d - j * (j + 1) / 2 + i
}

/// The duplication matrix `D_d` with `D_d vech(A) = vec(A)` for symmetric `A`.
pub fn duplication_matrix(d: usize) -> DMatrix<f64> {
    assert!(d >= 1, "duplication matrix needs d >= 1");
    let mut dd = DMatrix::zeros(d * d, d * (d + 1) / 2);
    for j in 0..d {
        for i in 0..d {
            let (lo, hi) = if i >= j { (j, i) } else { (i, j) };
            dd[(vec_index(i, j, d), vech_index(hi, lo, d))] = 1.0;
        }
    }
    dd
}

/// Moore-Penrose inverse `D_d^+ = (D_d' D_d)^{-1} D_d'`. Since `D'D` is
/// diagonal (1 for diagonal entries, 2 for off-diagonal ones) this is exact.
pub fn duplication_pinv(d: usize) -> DMatrix<f64> {
    let dd = duplication_matrix(d);
    let mut pinv = dd.transpose();
    for j in 0..d {
        for i in j..d {
            let w = if i == j { 1.0 } else { 0.5 };
            let row = vech_index(i, j, d);
            for c in 0..d * d {
                pinv[(row, c)] *= w;
            }
        }
    }
    pinv
}

/// Projects a symmetric matrix to positive definiteness by flooring its
/// eigenvalues at `floor_ratio` times the largest eigenvalue.
pub fn project_pd(a: &DMatrix<f64>, floor_ratio: f64) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let floor = if max_ev > 0.0 { max_ev * floor_ratio } else { floor_ratio };
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < floor {
            *v = floor;
        }
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Condition number (ratio of extreme absolute eigenvalues) of a small
/// symmetric matrix.
pub fn symmetric_condition_number(a: &DMatrix<f64>) -> f64 {
    let eig = ((a + a.transpose()) * 0.5).symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v.abs());
        hi = hi.max(v.abs());
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Cholesky factor of a symmetric positive-definite matrix, with a
/// conditioning error carrying `context` when the factorization fails.
pub fn cholesky_lower(a: &DMatrix<f64>, context: &[f64]) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(a.clone())
        .map(|c| c.l())
        .ok_or_else(|| VbilError::Conditioning {
            what: "matrix is not positive definite".to_string(),
            lambda: context.to_vec(),
        })
}
