//! Dense SVD and symmetric eigendecomposition backed by faer, exchanged as
//! nalgebra matrices.

use alloc::vec::Vec;

use faer::{MatRef, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `A = U diag(s) V'` with `k = min(m, n)` columns and `s` non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// Eigenvalues in non-decreasing order, eigenvectors as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseEigen {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

fn view(m: &DMatrix<f64>) -> MatRef<'_, f64> {
    MatRef::from_column_major_slice(m.as_slice(), m.nrows(), m.ncols())
}

fn copy(m: MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn thin_svd(m: &DMatrix<f64>) -> Result<DenseSvd> {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok(DenseSvd {
            u: DMatrix::zeros(rows, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(cols, 0),
        });
    }
    let svd = view(m).thin_svd().map_err(|_| Error::NoConvergence("svd"))?;
    let s = svd.S().column_vector();
    Ok(DenseSvd {
        u: copy(svd.U()),
        s: DVector::from_fn(k, |i, _| s[i]),
        v: copy(svd.V()),
    })
}

/// Singular values in non-increasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    view(m).singular_values().map_err(|_| Error::NoConvergence("svd"))
}

/// Eigendecomposition of a symmetric matrix; only the lower triangle is read.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<DenseEigen> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: "symmetric eigendecomposition",
            expected: (m.nrows(), m.nrows()),
            found: m.shape(),
        });
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(DenseEigen {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let evd = view(m)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::NoConvergence("symmetric eigendecomposition"))?;
    let s = evd.S().column_vector();
    Ok(DenseEigen {
        eigenvalues: DVector::from_fn(n, |i, _| s[i]),
        eigenvectors: copy(evd.U()),
    })
}
