//! Matrix-completion loss over observed entries, its sparse gradient, the
//! nuclear-ball linear minimisation oracle and exact line search.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::factored::{RankOneOuter, ThinSvd};
use crate::math::{abs, dot, norm, sqrt};

/// One observed entry `Y[row, col] = value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl Entry {
    pub fn new(row: usize, col: usize, value: f64) -> Self {
        Self { row, col, value }
    }
}

/// The observed set Ω with values `Y`, kept sorted by `(row, col)` and
/// indexed by row and by column.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    nrows: usize,
    ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
    row_ptr: Vec<usize>,
    col_ptr: Vec<usize>,
    col_order: Vec<usize>,
}

impl Observations {
    pub fn new(nrows: usize, ncols: usize, mut entries: Vec<Entry>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| e.row >= nrows || e.col >= ncols) {
            return Err(Error::IndexOutOfBounds {
                row: e.row,
                col: e.col,
                nrows,
                ncols,
            });
        }
        entries.sort_by_key(|e| (e.row, e.col));
        if let Some(w) = entries
            .windows(2)
            .find(|w| w[0].row == w[1].row && w[0].col == w[1].col)
        {
            return Err(Error::DuplicateEntry {
                row: w[0].row,
                col: w[0].col,
            });
        }
        let rows: Vec<usize> = entries.iter().map(|e| e.row).collect();
        let cols: Vec<usize> = entries.iter().map(|e| e.col).collect();
        let values: Vec<f64> = entries.iter().map(|e| e.value).collect();

        let mut row_ptr = vec![0usize; nrows + 1];
        for &r in &rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut col_ptr = vec![0usize; ncols + 1];
        for &c in &cols {
            col_ptr[c + 1] += 1;
        }
        for j in 0..ncols {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut col_order: Vec<usize> = (0..rows.len()).collect();
        // Stable: entries inside a column stay ordered by row.
        col_order.sort_by_key(|&e| cols[e]);

        Ok(Self {
            nrows,
            ncols,
            rows,
            cols,
            values,
            row_ptr,
            col_ptr,
            col_order,
        })
    }

    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let entries = triplets.iter().map(|&(r, c, v)| Entry::new(r, c, v)).collect();
        Self::new(nrows, ncols, entries)
    }

    pub fn empty(nrows: usize, ncols: usize) -> Self {
        Self::new(nrows, ncols, Vec::new()).expect("empty set is valid")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = Entry> + '_ {
        (0..self.len()).map(move |e| Entry::new(self.rows[e], self.cols[e], self.values[e]))
    }

    pub fn indices(&self) -> Vec<(usize, usize)> {
        self.rows.iter().copied().zip(self.cols.iter().copied()).collect()
    }

    /// Frobenius norm of the sparse data matrix (zeros off Ω).
    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.values)
    }

    /// Same pattern, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "observation values",
                expected: (self.len(), 1),
                found: (values.len(), 1),
            });
        }
        let mut out = self.clone();
        out.values = values;
        Ok(out)
    }

    fn check_shape(&self, x: &ThinSvd) -> Result<()> {
        if (x.nrows(), x.ncols()) != (self.nrows, self.ncols) {
            return Err(Error::DimensionMismatch {
                context: "iterate vs observations",
                expected: (self.nrows, self.ncols),
                found: (x.nrows(), x.ncols()),
            });
        }
        Ok(())
    }

    /// `X` restricted to Ω, in storage order.
    pub fn sample(&self, x: &ThinSvd) -> Result<Vec<f64>> {
        self.check_shape(x)?;
        let eval = x.entries();
        Ok(self
            .rows
            .iter()
            .zip(&self.cols)
            .map(|(&i, &j)| eval.get(i, j))
            .collect())
    }

    /// `scale * u v'` restricted to Ω.
    pub fn sample_rank_one(&self, u: &[f64], v: &[f64], scale: f64) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.cols)
            .map(|(&i, &j)| scale * u[i] * v[j])
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for e in self.iter() {
            out[(e.row, e.col)] = e.value;
        }
        out
    }
}

/// Which side of the gradient operator to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `G v`, input of length n.
    Right,
    /// `G' u`, input of length m.
    Left,
}

/// `X - Y` on Ω: the gradient of the half squared loss, stored with the
/// pattern of the observations it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseResidual<'a> {
    obs: &'a Observations,
    values: Vec<f64>,
}

impl<'a> SparseResidual<'a> {
    pub fn new(obs: &'a Observations, values: Vec<f64>) -> Result<Self> {
        if values.len() != obs.len() {
            return Err(Error::DimensionMismatch {
                context: "residual values",
                expected: (obs.len(), 1),
                found: (values.len(), 1),
            });
        }
        Ok(Self { obs, values })
    }

    pub fn pattern(&self) -> &'a Observations {
        self.obs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.obs.nrows
    }

    pub fn ncols(&self) -> usize {
        self.obs.ncols
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn apply(&self, side: Side, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (need, out_len) = match side {
            Side::Right => (self.ncols(), self.nrows()),
            Side::Left => (self.nrows(), self.ncols()),
        };
        if x.len() != need {
            return Err(Error::DimensionMismatch {
                context: "gradient operand",
                expected: (need, 1),
                found: (x.len(), 1),
            });
        }
        let mut out = DVector::zeros(out_len);
        match side {
            Side::Right => self.apply_right_into(x.as_slice(), out.as_mut_slice()),
            Side::Left => self.apply_left_into(x.as_slice(), out.as_mut_slice()),
        }
        Ok(out)
    }

    pub(crate) fn apply_right_into(&self, v: &[f64], out: &mut [f64]) {
        let o = self.obs;
        for (i, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for e in o.row_ptr[i]..o.row_ptr[i + 1] {
                acc += self.values[e] * v[o.cols[e]];
            }
            *slot = acc;
        }
    }

    pub(crate) fn apply_left_into(&self, u: &[f64], out: &mut [f64]) {
        let o = self.obs;
        for (j, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &e in &o.col_order[o.col_ptr[j]..o.col_ptr[j + 1]] {
                acc += self.values[e] * u[o.rows[e]];
            }
            *slot = acc;
        }
    }

    /// `z = G'G v`, returning `||G v||²`. One pass over the rows.
    pub(crate) fn gram_apply_into(&self, v: &[f64], z: &mut [f64]) -> f64 {
        let o = self.obs;
        z.iter_mut().for_each(|x| *x = 0.0);
        let mut rho = 0.0;
        for i in 0..self.nrows() {
            let range = o.row_ptr[i]..o.row_ptr[i + 1];
            let cols = &o.cols[range.clone()];
            let vals = &self.values[range];
            let mut acc = 0.0;
            for (&c, &r) in cols.iter().zip(vals) {
                acc += r * v[c];
            }
            rho += acc * acc;
            for (&c, &r) in cols.iter().zip(vals) {
                z[c] += r * acc;
            }
        }
        rho
    }

    /// `u' G v`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        let o = self.obs;
        self.values
            .iter()
            .enumerate()
            .map(|(e, r)| r * u[o.rows[e]] * v[o.cols[e]])
            .sum()
    }

    /// `<G, D>` for `D` given on Ω.
    pub fn inner(&self, on_support: &[f64]) -> f64 {
        dot(&self.values, on_support)
    }

    /// `G Q` for a dense `n x k` matrix `Q`.
    pub fn right_multiply(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let k = q.ncols();
        let qt = q.transpose();
        let qs = qt.as_slice();
        let o = self.obs;
        // Row-major accumulation into the transpose of the result.
        let mut out_t = DMatrix::zeros(k, self.nrows());
        {
            let buf = out_t.as_mut_slice();
            for i in 0..self.nrows() {
                let dst = &mut buf[i * k..(i + 1) * k];
                for e in o.row_ptr[i]..o.row_ptr[i + 1] {
                    let r = self.values[e];
                    let src = &qs[o.cols[e] * k..(o.cols[e] + 1) * k];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += r * s;
                    }
                }
            }
        }
        out_t.transpose()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows(), self.ncols());
        for (e, &r) in self.values.iter().enumerate() {
            out[(self.obs.rows[e], self.obs.cols[e])] = r;
        }
        out
    }
}

/// `f(X) = 1/2 sum_{(i,j) in Ω} (X_ij - Y_ij)^2`.
pub fn value(x: &ThinSvd, obs: &Observations) -> Result<f64> {
    let xs = obs.sample(x)?;
    Ok(half_squared_error(&xs, obs.values()))
}

/// `grad f(X) = P_Ω(X - Y)`.
pub fn residual<'a>(x: &ThinSvd, obs: &'a Observations) -> Result<SparseResidual<'a>> {
    let xs = obs.sample(x)?;
    let values = xs.iter().zip(obs.values()).map(|(a, b)| a - b).collect();
    SparseResidual::new(obs, values)
}

/// Root mean squared error of `X` on a held-out set.
pub fn rmse(x: &ThinSvd, test: &Observations) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptySet);
    }
    let xs = test.sample(x)?;
    Ok(sqrt(2.0 * half_squared_error(&xs, test.values()) / test.len() as f64))
}

fn half_squared_error(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

/// Minimiser of `tau -> 1/2 ||R + tau D||^2` over `[0, tau_max]`, with `R`
/// the current residual and `D` the step direction, both on Ω.
pub fn exact_line_search(res: &SparseResidual<'_>, direction: &[f64], tau_max: f64) -> f64 {
    let dd = dot(direction, direction);
    if dd == 0.0 {
        return 0.0;
    }
    (-res.inner(direction) / dd).clamp(0.0, tau_max)
}

/// Frank-Wolfe gap `<grad f, X - S>` for the LMO atom `S`; bounds
/// `f(X) - f*` from above.
pub fn duality_gap(x: &ThinSvd, res: &SparseResidual<'_>, atom: &RankOneOuter) -> Result<f64> {
    let xs = res.pattern().sample(x)?;
    Ok(gap_on_support(&xs, res, atom))
}

pub(crate) fn gap_on_support(x_on_support: &[f64], res: &SparseResidual<'_>, atom: &RankOneOuter) -> f64 {
    res.inner(x_on_support) - atom.scale * res.bilinear(atom.u.as_slice(), atom.v.as_slice())
}

/// The contract the solvers are written against: a smooth loss whose value
/// depends on `X` only through its entries on a fixed support, so both the
/// iterate and every search direction can be handled as values on that
/// support.
pub trait Objective {
    fn support(&self) -> &Observations;

    fn value_on_support(&self, x_on_support: &[f64]) -> f64;

    fn gradient_on_support(&self, x_on_support: &[f64]) -> SparseResidual<'_>;

    /// Step size in `[0, tau_max]` minimising the loss along `direction`.
    fn line_search(&self, x_on_support: &[f64], direction: &[f64], tau_max: f64) -> f64;
}

/// Half squared loss on the observed entries.
#[derive(Debug, Clone, Copy)]
pub struct SquaredLoss<'a> {
    obs: &'a Observations,
}

impl<'a> SquaredLoss<'a> {
    pub fn new(obs: &'a Observations) -> Self {
        Self { obs }
    }
}

impl Objective for SquaredLoss<'_> {
    fn support(&self) -> &Observations {
        self.obs
    }

    fn value_on_support(&self, x_on_support: &[f64]) -> f64 {
        half_squared_error(x_on_support, self.obs.values())
    }

    fn gradient_on_support(&self, x_on_support: &[f64]) -> SparseResidual<'_> {
        let values = x_on_support.iter().zip(self.obs.values()).map(|(a, b)| a - b).collect();
        SparseResidual { obs: self.obs, values }
    }

    fn line_search(&self, x_on_support: &[f64], direction: &[f64], tau_max: f64) -> f64 {
        let res = self.gradient_on_support(x_on_support);
        exact_line_search(&res, direction, tau_max)
    }
}

/// Rayleigh-quotient changes below this fraction are treated as rounding.
const ROUNDING_FLOOR: f64 = 1e-13;

/// Krylov basis size before a restart from the current Ritz vector.
const KRYLOV_WIDTH: usize = 20;

/// Linear minimisation oracle over the nuclear ball of radius `delta`:
/// `argmin <Z, G>` is `-delta u1 v1'` for the leading singular pair of `G`,
/// found by restarted Lanczos (power iteration with Rayleigh-Ritz over the
/// Krylov basis) on `G'G`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lmo {
    /// Stop when the Rayleigh quotient changes by at most this fraction and
    /// the geometric tail of further changes is below it too.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for Lmo {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 500,
        }
    }
}

/// A solved oracle call.
#[derive(Debug, Clone, PartialEq)]
pub struct LmoAtom {
    /// `-delta u1 v1'` with unit `u1`, `v1`.
    pub atom: RankOneOuter,
    /// Estimate of the leading singular value of the gradient.
    pub sigma: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Leading singular triplet estimate from power iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadingTriplet {
    pub u: DVector<f64>,
    pub sigma: f64,
    pub v: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl Lmo {
    /// `None` when the gradient vanishes (unconstrained optimum reached).
    pub fn solve(&self, res: &SparseResidual<'_>, delta: f64, rng: &mut impl Rng) -> Option<LmoAtom> {
        let t = self.leading_triplet(res, rng)?;
        if !t.converged {
            log::warn!(
                "power iteration stopped after {} iterations without reaching tol {:e}",
                t.iterations,
                self.tol
            );
        }
        Some(LmoAtom {
            atom: RankOneOuter::new(t.u, t.v, -delta),
            sigma: t.sigma,
            converged: t.converged,
            iterations: t.iterations,
        })
    }

    /// Krylov iteration from a random start, restarted once from a fresh
    /// vector if the start lies in the null space of the gradient.
    /// `iterations` counts products with `G'G`.
    pub fn leading_triplet(&self, res: &SparseResidual<'_>, rng: &mut impl Rng) -> Option<LeadingTriplet> {
        if res.is_zero() {
            return None;
        }
        self.power_run(res, rng).or_else(|| self.power_run(res, rng))
    }

    fn power_run(&self, res: &SparseResidual<'_>, rng: &mut impl Rng) -> Option<LeadingTriplet> {
        let (m, n) = (res.nrows(), res.ncols());
        let width = KRYLOV_WIDTH.min(n);
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(width);
        let mut images: Vec<Vec<f64>> = Vec::with_capacity(width);
        let mut projected = DMatrix::zeros(width, width);
        let mut theta_prev = f64::NAN;
        let mut change_prev = f64::NAN;
        let mut converged = false;
        let mut iterations = 0;
        'restart: while iterations < self.max_iter.max(1) {
            basis.clear();
            images.clear();
            let mut q = v.clone();
            loop {
                iterations += 1;
                let mut z = vec![0.0; n];
                res.gram_apply_into(&q, &mut z);
                if iterations == 1 && norm(&z) == 0.0 {
                    return None;
                }
                basis.push(q);
                images.push(z.clone());
                let k = basis.len();
                for i in 0..k {
                    let h = 0.5 * (dot(&basis[i], &images[k - 1]) + dot(&basis[k - 1], &images[i]));
                    projected[(i, k - 1)] = h;
                    projected[(k - 1, i)] = h;
                }
                let eig = crate::dense::symmetric_eigen(&projected.view((0, 0), (k, k)).into_owned()).ok()?;
                let theta = eig.eigenvalues[k - 1];
                let y = eig.eigenvectors.column(k - 1);
                v.iter_mut().for_each(|x| *x = 0.0);
                for (b, &c) in basis.iter().zip(y.iter()) {
                    v.iter_mut().zip(b).for_each(|(vi, bi)| *vi += c * bi);
                }
                let nv = norm(&v);
                v.iter_mut().for_each(|x| *x /= nv);

                for _ in 0..2 {
                    for b in &basis {
                        let c = dot(b, &z);
                        z.iter_mut().zip(b).for_each(|(zi, bi)| *zi -= c * bi);
                    }
                }
                let nz = norm(&z);
                let exhausted = nz <= ROUNDING_FLOOR * theta.max(f64::MIN_POSITIVE) || k == n;
                let done = if k == 1 && !theta_prev.is_nan() {
                    false
                } else {
                    let change = abs(theta - theta_prev);
                    let ratio = change / change_prev;
                    let done = change <= ROUNDING_FLOOR * theta
                        || (change <= self.tol * theta
                            && ratio < 1.0
                            && change * ratio / (1.0 - ratio) <= self.tol * theta);
                    theta_prev = theta;
                    change_prev = change;
                    done
                };
                if done || exhausted {
                    converged = true;
                    break 'restart;
                }
                if iterations >= self.max_iter.max(1) {
                    break 'restart;
                }
                if k == width {
                    continue 'restart;
                }
                z.iter_mut().for_each(|x| *x /= nz);
                q = z;
            }
        }
        let mut gv = vec![0.0; m];
        res.apply_right_into(&v, &mut gv);
        let sigma = norm(&gv);
        if sigma == 0.0 {
            return None;
        }
        let u = DVector::from_iterator(m, gv.iter().map(|x| x / sigma));
        Some(LeadingTriplet {
            u,
            sigma,
            v: DVector::from_vec(v),
            converged,
            iterations,
        })
    }
}
