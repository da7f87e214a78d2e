//! Thin-SVD representation of the iterate and its rank-one maintenance.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dense::{singular_values, thin_svd};
use crate::error::{Error, Result};
use crate::math::{abs, norm};

/// Singular values at or below this count as zero (rank threshold of the
/// MovieLens experiments).
pub const DEFAULT_RANK_THRESHOLD: f64 = 1e-6;

/// Largest tolerated entry of `U'U - I` / `V'V - I` before the factors are
/// re-orthogonalised.
pub const ORTHO_TOL: f64 = 1e-8;

/// New directions whose component outside the current span is below this
/// fraction of their norm are treated as lying inside the span.
const SPAN_TOL: f64 = 1e-10;

/// `X = U diag(s) V'` with column-orthonormal `U` (m x r), `V` (n x r) and
/// strictly positive, non-increasing `s`. Rank 0 is represented by empty
/// factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinSvd {
    u: DMatrix<f64>,
    s: DVector<f64>,
    v: DMatrix<f64>,
}

/// The rank-one matrix `scale * u v'`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneOuter {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub scale: f64,
}

impl RankOneOuter {
    pub fn new(u: DVector<f64>, v: DVector<f64>, scale: f64) -> Self {
        Self { u, v, scale }
    }

    pub fn nrows(&self) -> usize {
        self.u.len()
    }

    pub fn ncols(&self) -> usize {
        self.v.len()
    }

    pub fn nuclear_norm(&self) -> f64 {
        abs(self.scale) * self.u.norm() * self.v.norm()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.u * self.v.transpose() * self.scale
    }
}

impl ThinSvd {
    /// The zero matrix.
    pub fn zero(nrows: usize, ncols: usize) -> Self {
        Self {
            u: DMatrix::zeros(nrows, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(ncols, 0),
        }
    }

    /// Assembles a factorization, checking every representation invariant.
    pub fn from_parts(u: DMatrix<f64>, s: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        let r = s.len();
        if u.ncols() != r || v.ncols() != r {
            return Err(Error::DimensionMismatch {
                context: "thin SVD factors",
                expected: (r, r),
                found: (u.ncols(), v.ncols()),
            });
        }
        if r > u.nrows().min(v.nrows()) {
            return Err(Error::InvalidFactorization("rank exceeds min(m, n)"));
        }
        if s.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidFactorization(
                "singular values must be positive and finite",
            ));
        }
        if s.as_slice().windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidFactorization("singular values must be non-increasing"));
        }
        let out = Self { u, s, v };
        if out.orthogonality_drift() > ORTHO_TOL {
            return Err(Error::InvalidFactorization("factors are not orthonormal"));
        }
        Ok(out)
    }

    /// Thin SVD of the `nrows x ncols` matrix with `diag` on its main diagonal.
    pub fn from_diagonal(nrows: usize, ncols: usize, diag: &[f64]) -> Result<Self> {
        if diag.len() > nrows.min(ncols) {
            return Err(Error::DimensionMismatch {
                context: "diagonal length",
                expected: (nrows.min(ncols), 1),
                found: (diag.len(), 1),
            });
        }
        let mut order: Vec<usize> = (0..diag.len()).filter(|&i| diag[i] != 0.0).collect();
        order.sort_by(|&a, &b| abs(diag[b]).total_cmp(&abs(diag[a])).then(a.cmp(&b)));
        let r = order.len();
        let mut u = DMatrix::zeros(nrows, r);
        let mut v = DMatrix::zeros(ncols, r);
        let mut s = DVector::zeros(r);
        for (k, &i) in order.iter().enumerate() {
            u[(i, k)] = diag[i].signum();
            v[(i, k)] = 1.0;
            s[k] = abs(diag[i]);
        }
        Ok(Self { u, s, v })
    }

    pub fn nrows(&self) -> usize {
        self.u.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.v.nrows()
    }

    /// Number of stored singular triplets.
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn singular_values(&self) -> &[f64] {
        self.s.as_slice()
    }

    /// Smallest stored singular value, `None` at rank 0.
    pub fn sigma_min(&self) -> Option<f64> {
        self.s.as_slice().last().copied()
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.s.iter().sum()
    }

    pub fn numeric_rank(&self, rank_threshold: f64) -> usize {
        self.s.iter().filter(|&&x| x > rank_threshold).count()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (k, mut col) in us.column_iter_mut().enumerate() {
            col *= self.s[k];
        }
        us * self.v.transpose()
    }

    /// Largest entry of `U'U - I` and `V'V - I`.
    pub fn orthogonality_drift(&self) -> f64 {
        fn drift(q: &DMatrix<f64>) -> f64 {
            let g = q.tr_mul(q);
            let mut worst: f64 = 0.0;
            for j in 0..g.ncols() {
                for i in 0..g.nrows() {
                    let target = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max(abs(g[(i, j)] - target));
                }
            }
            worst
        }
        drift(&self.u).max(drift(&self.v))
    }

    /// Evaluator for individual entries, `O(r)` per entry.
    pub fn entries(&self) -> EntryEvaluator {
        let mut left = self.u.transpose();
        for (k, mut row) in left.row_iter_mut().enumerate() {
            row *= self.s[k];
        }
        EntryEvaluator {
            left,
            right: self.v.transpose(),
        }
    }

    /// `X_ij` for each requested index.
    pub fn reconstruct_entries(&self, indices: &[(usize, usize)]) -> Result<Vec<f64>> {
        let (m, n) = (self.nrows(), self.ncols());
        if let Some(&(row, col)) = indices.iter().find(|&&(i, j)| i >= m || j >= n) {
            return Err(Error::IndexOutOfBounds {
                row,
                col,
                nrows: m,
                ncols: n,
            });
        }
        let eval = self.entries();
        Ok(indices.iter().map(|&(i, j)| eval.get(i, j)).collect())
    }

    /// Thin SVD of `iterate_scale * X + delta`, with singular values at or
    /// below `rank_threshold` dropped.
    ///
    /// Brand's update: the new directions are split into their components
    /// inside and outside the current spans, which leaves an `(r+1) x (r+1)`
    /// core of the form diagonal plus rank one to re-diagonalise.
    pub fn rank_one_update(&self, iterate_scale: f64, delta: &RankOneOuter, rank_threshold: f64) -> Result<ThinSvd> {
        if delta.nrows() != self.nrows() || delta.ncols() != self.ncols() {
            return Err(Error::DimensionMismatch {
                context: "rank-one update",
                expected: (self.nrows(), self.ncols()),
                found: (delta.nrows(), delta.ncols()),
            });
        }
        if !(iterate_scale >= 0.0) || !iterate_scale.is_finite() || !delta.scale.is_finite() {
            return Err(Error::InvalidParameter(
                "update scales must be finite, iterate scale non-negative",
            ));
        }
        let r = self.rank();
        let (p, rx, rho_x) = split_against(&self.u, &delta.u);
        let (q, ry, rho_y) = split_against(&self.v, &delta.v);

        let mut core = DMatrix::zeros(r + 1, r + 1);
        for i in 0..r {
            core[(i, i)] = iterate_scale * self.s[i];
        }
        let pe = DVector::from_fn(r + 1, |i, _| if i < r { p[i] } else { rho_x });
        let qe = DVector::from_fn(r + 1, |i, _| if i < r { q[i] } else { rho_y });
        core.ger(delta.scale, &pe, &qe, 1.0);

        let svd = thin_svd(&core)?;
        let keep = svd.s.iter().take_while(|&&x| x > rank_threshold).count();

        let u = extend_basis(&self.u, &rx, rho_x, &svd.u, keep);
        let v = extend_basis(&self.v, &ry, rho_y, &svd.v, keep);
        let s = svd.s.rows(0, keep).into_owned();
        let out = ThinSvd { u, s, v };
        if out.orthogonality_drift() > ORTHO_TOL {
            return out.reorthogonalized(rank_threshold);
        }
        Ok(out)
    }

    /// Restores orthonormal factors through thin QR of `U` and `V` and an SVD
    /// of the small `R_u diag(s) R_v'` core.
    pub fn reorthogonalized(&self, rank_threshold: f64) -> Result<ThinSvd> {
        let r = self.rank();
        if r == 0 {
            return Ok(self.clone());
        }
        let qr_u = self.u.clone().qr();
        let qr_v = self.v.clone().qr();
        let mut core = qr_u.r();
        for (k, mut col) in core.column_iter_mut().enumerate() {
            col *= self.s[k];
        }
        let core = core * qr_v.r().transpose();
        let svd = thin_svd(&core)?;
        let keep = svd.s.iter().take_while(|&&x| x > rank_threshold).count();
        Ok(ThinSvd {
            u: qr_u.q() * svd.u.columns(0, keep),
            s: svd.s.rows(0, keep).into_owned(),
            v: qr_v.q() * svd.v.columns(0, keep),
        })
    }

    /// `a * X` (a > 0 keeps the factorization valid; a == 0 gives rank 0).
    pub fn scaled(&self, a: f64) -> ThinSvd {
        if a == 0.0 {
            return ThinSvd::zero(self.nrows(), self.ncols());
        }
        let mut out = self.clone();
        out.s *= abs(a);
        if a < 0.0 {
            out.u.neg_mut();
        }
        out
    }
}

/// Row-major copies of `U diag(s)` and `V` for fast entry lookup.
#[derive(Debug, Clone)]
pub struct EntryEvaluator {
    left: DMatrix<f64>,
    right: DMatrix<f64>,
}

impl EntryEvaluator {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let r = self.left.nrows();
        if r == 0 {
            return 0.0;
        }
        let a = &self.left.as_slice()[row * r..(row + 1) * r];
        let b = &self.right.as_slice()[col * r..(col + 1) * r];
        crate::math::dot(a, b)
    }
}

/// Splits `x` into `Q p + rho * e` with `e` a unit vector orthogonal to the
/// columns of `Q`. Two Gram-Schmidt passes.
fn split_against(q: &DMatrix<f64>, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>, f64) {
    let mut p = q.tr_mul(x);
    let mut res = x - q * &p;
    let p2 = q.tr_mul(&res);
    res -= q * &p2;
    p += p2;
    let rho = norm(res.as_slice());
    let scale = norm(x.as_slice());
    if rho <= SPAN_TOL * scale || rho == 0.0 {
        return (p, res, 0.0);
    }
    (p, res, rho)
}

/// `[Q, e] * A[:, ..keep]` without materialising `[Q, e]`.
fn extend_basis(q: &DMatrix<f64>, res: &DVector<f64>, rho: f64, a: &DMatrix<f64>, keep: usize) -> DMatrix<f64> {
    let r = q.ncols();
    let mut out = q * a.view((0, 0), (r, keep));
    if rho > 0.0 {
        for k in 0..keep {
            out.column_mut(k).axpy(a[(r, k)] / rho, res, 1.0);
        }
    }
    out
}

/// Dense SVD reference used by tests and the verification suite. Singular
/// values below `max(m, n) * eps * sigma_1` are treated as zero.
///
/// # Panics
/// If the dense SVD fails to converge.
pub fn full_svd_oracle(dense: &DMatrix<f64>) -> ThinSvd {
    let (m, n) = dense.shape();
    if m == 0 || n == 0 {
        return ThinSvd::zero(m, n);
    }
    let svd = thin_svd(dense).expect("dense svd converges");
    let top = svd.s.iter().copied().fold(0.0, f64::max);
    let tol = (m.max(n) as f64) * f64::EPSILON * top;
    let keep = svd.s.iter().take_while(|&&x| x > tol && x > 0.0).count();
    ThinSvd {
        u: svd.u.columns(0, keep).into_owned(),
        s: svd.s.rows(0, keep).into_owned(),
        v: svd.v.columns(0, keep).into_owned(),
    }
}

fn dense_singular_values(dense: &DMatrix<f64>) -> Vec<f64> {
    singular_values(dense).expect("dense svd converges")
}

/// Number of singular values of a dense matrix above `threshold`.
pub fn dense_rank(dense: &DMatrix<f64>, threshold: f64) -> usize {
    if dense.is_empty() {
        return 0;
    }
    dense_singular_values(dense).iter().filter(|&&x| x > threshold).count()
}

/// Largest singular value of a dense matrix.
pub fn spectral_norm(dense: &DMatrix<f64>) -> f64 {
    if dense.is_empty() {
        return 0.0;
    }
    dense_singular_values(dense).iter().copied().fold(0.0, f64::max)
}

/// Sum of the singular values of a dense matrix.
pub fn dense_nuclear_norm(dense: &DMatrix<f64>) -> f64 {
    if dense.is_empty() {
        return 0.0;
    }
    dense_singular_values(dense).iter().sum()
}
