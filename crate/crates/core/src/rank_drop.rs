//! Rank-drop directions.
//!
//! For an iterate `X = U Σ V'` of rank `r >= 2` and unit `s`, `t` in `R^r`,
//! the update `X+ = (1 + τ) X - τ δ U s t' V'` removes one singular direction
//! at the step length `τ*` attached to the pair. Two regimes:
//!
//! * interior (`κ >= σ_r`, with `κ = (δ - ||X||_NN) / 2`): any pair with
//!   `κ s'Σ⁻¹t >= 1` is admissible and keeps the iterate inside the ball;
//! * exterior: the pair is restricted to `s = t`, which keeps the iterate on
//!   its current face.
//!
//! In both regimes the pair is chosen to maximise the gradient correlation
//! `<∇f, U s t' V'> / (s'Σ⁻¹t)`, so `X - δ U s t' V'` is a descent-aligned
//! away direction.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Schur};

use crate::dense::{symmetric_eigen, thin_svd};
use crate::error::{Error, Result};
use crate::factored::{RankOneOuter, ThinSvd};
use crate::math::{abs, cos, sin, sqrt};
use crate::objective::SparseResidual;

/// Relative threshold under which the smallest singular value of `M_λ`
/// counts as zero.
pub const ZERO_SV_TOL: f64 = 1e-8;

/// Tolerated excess of `||X||_NN` over `δ` before an iterate is rejected.
pub const FEASIBILITY_SLACK: f64 = 1e-10;

/// Exterior steps with `δ s'Σ⁻¹s <= 1 + EXTERIOR_MARGIN` are rejected.
pub const EXTERIOR_MARGIN: f64 = 1e-12;

const IMAG_TOL: f64 = 1e-10;
const EIGEN_TIE_TOL: f64 = 1e-10;
const SCHUR_MAX_ITER: usize = 10_000;
const BISECTION_STEPS: usize = 200;
const DUAL_TOL: f64 = 1e-13;

/// Which interior pairs are considered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InteriorSearch {
    /// Stationary pairs from the real eigenvalues of `-ΣW` plus the best
    /// pair with `κ s'Σ⁻¹t = 1` (the constrained optimum when the ball
    /// constraint is active).
    #[default]
    Augmented,
    /// Stationary pairs from the real eigenvalues of `-ΣW` only.
    KktOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropCase {
    Interior,
    Exterior,
}

/// `W = U' ∇f V`, the gradient seen through the current singular bases.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGradient {
    w: DMatrix<f64>,
}

impl ProjectedGradient {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::DimensionMismatch {
                context: "projected gradient",
                expected: (w.nrows(), w.nrows()),
                found: w.shape(),
            });
        }
        Ok(Self { w })
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn rank(&self) -> usize {
        self.w.nrows()
    }
}

/// An admissible interior pair.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorCandidate {
    pub s: DVector<f64>,
    pub t: DVector<f64>,
    /// Eigenvalue of `-ΣW` the pair came from; `None` for the
    /// active-constraint pair.
    pub lambda: Option<f64>,
    /// `s'Wt / s'Σ⁻¹t`.
    pub score: f64,
    /// `s'Wt`.
    pub alignment: f64,
    /// `s'Σ⁻¹t`, positive.
    pub inv_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankDropStep {
    pub s: DVector<f64>,
    pub t: DVector<f64>,
    pub tau_star: f64,
    pub case: DropCase,
    /// `<∇f, U s t' V'> / s'Σ⁻¹t`, the selection criterion.
    pub score: f64,
    /// `<∇f, U s t' V'>`.
    pub alignment: f64,
}

impl RankDropStep {
    /// `U s` and `V t`.
    pub fn lift(&self, x: &ThinSvd) -> (DVector<f64>, DVector<f64>) {
        (x.u() * &self.s, x.v() * &self.t)
    }

    /// The rank-one part `-τ δ (U s)(V t)'` of the update at `τ`.
    pub fn update(&self, x: &ThinSvd, delta: f64, tau: f64) -> RankOneOuter {
        let (us, vt) = self.lift(x);
        RankOneOuter::new(us, vt, -tau * delta)
    }

    /// `(1 + τ*) X - τ* δ U s t' V'`.
    pub fn apply(&self, x: &ThinSvd, delta: f64, rank_threshold: f64) -> Result<ThinSvd> {
        x.rank_one_update(
            1.0 + self.tau_star,
            &self.update(x, delta, self.tau_star),
            rank_threshold,
        )
    }
}

/// `κ = (δ - ||X||_NN) / 2`, half the distance to the boundary.
pub fn kappa(x: &ThinSvd, delta: f64) -> Result<f64> {
    let nn = x.nuclear_norm();
    if nn - delta > FEASIBILITY_SLACK * delta.max(1.0) {
        return Err(Error::Infeasible {
            nuclear_norm: nn,
            delta,
        });
    }
    Ok(((delta - nn) / 2.0).max(0.0))
}

pub fn projected_gradient(x: &ThinSvd, res: &SparseResidual<'_>) -> Result<ProjectedGradient> {
    if (x.nrows(), x.ncols()) != (res.nrows(), res.ncols()) {
        return Err(Error::DimensionMismatch {
            context: "iterate vs gradient",
            expected: (x.nrows(), x.ncols()),
            found: (res.nrows(), res.ncols()),
        });
    }
    let gv = res.right_multiply(x.v());
    ProjectedGradient::new(x.u().tr_mul(&gv))
}

fn check_sizes(w: &ProjectedGradient, sigma: &[f64]) -> Result<()> {
    if w.rank() != sigma.len() {
        return Err(Error::DimensionMismatch {
            context: "projected gradient vs singular values",
            expected: (sigma.len(), sigma.len()),
            found: (w.rank(), w.rank()),
        });
    }
    if sigma.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidFactorization("singular values must be positive"));
    }
    Ok(())
}

fn inv_weight(s: &DVector<f64>, sigma: &[f64], t: &DVector<f64>) -> f64 {
    s.iter().zip(t.iter()).zip(sigma).map(|((a, b), x)| a * b / x).sum()
}

/// Stationary pairs of `max <W, s t'> / s'Σ⁻¹t` that satisfy `κ s'Σ⁻¹t >= 1`.
///
/// For each real eigenvalue `λ` of `-ΣW`, the singular pairs of
/// `M_λ = -(W + λΣ⁻¹)/2` whose singular value is numerically zero are
/// sign-normalised to `s'Σ⁻¹t > 0` and kept when admissible.
pub fn interior_candidates(
    w: &ProjectedGradient,
    sigma: &[f64],
    kappa: f64,
    zero_sv_tol: f64,
) -> Result<Vec<InteriorCandidate>> {
    check_sizes(w, sigma)?;
    let r = sigma.len();
    let wm = w.w();
    let mut sw = -wm.clone();
    for (i, mut row) in sw.row_iter_mut().enumerate() {
        row *= sigma[i];
    }
    let mut lambdas: Vec<f64> = match Schur::try_new(sw, f64::EPSILON, SCHUR_MAX_ITER) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .filter(|z| abs(z.im) <= IMAG_TOL * z.re.abs().max(1.0))
            .map(|z| z.re)
            .collect(),
        None => {
            log::warn!("eigenvalues of -ΣW did not converge; no interior candidates");
            Vec::new()
        }
    };
    lambdas.sort_by(|a, b| a.total_cmp(b));
    lambdas.dedup_by(|a, b| abs(*a - *b) <= 1e-12 * a.abs().max(b.abs()).max(1.0));

    let mut out = Vec::new();
    for lambda in lambdas {
        let mut m = wm.clone();
        for i in 0..r {
            m[(i, i)] += lambda / sigma[i];
        }
        m *= -0.5;
        let svd = thin_svd(&m)?;
        let smax = svd.s[0];
        for k in 0..r {
            if svd.s[k] > zero_sv_tol * smax.max(1.0) {
                continue;
            }
            let mut s = svd.u.column(k).into_owned();
            let t = svd.v.column(k).into_owned();
            let mut d = inv_weight(&s, sigma, &t);
            if d < 0.0 {
                s.neg_mut();
                d = -d;
            }
            if d == 0.0 || kappa * d < 1.0 {
                continue;
            }
            let alignment = s.dot(&(wm * &t));
            out.push(InteriorCandidate {
                score: alignment / d,
                s,
                t,
                lambda: Some(lambda),
                alignment,
                inv_weight: d,
            });
        }
    }
    Ok(out)
}

/// Best admissible pair with the ball constraint active, from the convex
/// dual `g(μ) = σ₁(W - μΣ⁻¹) + μ/κ`. Its subgradient is `1/κ - s'Σ⁻¹t` at the
/// top singular pair `(s, t)` of `W - μΣ⁻¹`; bisection keeps the endpoint
/// whose pair is admissible.
pub fn active_constraint_candidate(
    w: &ProjectedGradient,
    sigma: &[f64],
    kappa: f64,
) -> Result<Option<InteriorCandidate>> {
    check_sizes(w, sigma)?;
    if !(kappa > 0.0) {
        return Ok(None);
    }
    let wm = w.w();
    let top_pair = |mu: f64| -> Result<(DVector<f64>, DVector<f64>, f64)> {
        let mut m = wm.clone();
        for (i, x) in sigma.iter().enumerate() {
            m[(i, i)] -= mu / x;
        }
        let svd = thin_svd(&m)?;
        let s = svd.u.column(0).into_owned();
        let t = svd.v.column(0).into_owned();
        let d = inv_weight(&s, sigma, &t);
        Ok((s, t, d))
    };
    let target = 1.0 / kappa;
    let scale = wm.norm() * sigma[0] + 1.0;

    let mut lo = -scale;
    let mut lo_pair = top_pair(lo)?;
    let mut grow = 0;
    while lo_pair.2 < target {
        grow += 1;
        if grow > 60 {
            return Ok(None);
        }
        lo *= 2.0;
        lo_pair = top_pair(lo)?;
    }
    let mut hi = scale;
    grow = 0;
    while top_pair(hi)?.2 >= target {
        grow += 1;
        if grow > 60 {
            break;
        }
        hi *= 2.0;
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= DUAL_TOL * lo.abs().max(hi.abs()).max(1.0) {
            break;
        }
        let pair = top_pair(mid)?;
        if pair.2 >= target {
            lo = mid;
            lo_pair = pair;
        } else {
            hi = mid;
        }
    }
    let hi_pair = top_pair(hi)?;
    // At a kink of g the optimum mixes the top pairs on either side.
    let mixed = mix_pairs(wm, sigma, kappa, (&lo_pair, &hi_pair));
    let mut best = admissible(wm, lo_pair.0, lo_pair.1, lo_pair.2, kappa);
    if let Some(mixed) = mixed {
        if best.as_ref().is_none_or(|b| mixed.score > b.score) {
            best = Some(mixed);
        }
    }
    Ok(best)
}

type Pair = (DVector<f64>, DVector<f64>, f64);

fn admissible(wm: &DMatrix<f64>, s: DVector<f64>, t: DVector<f64>, d: f64, kappa: f64) -> Option<InteriorCandidate> {
    if !(d > 0.0) || kappa * d < 1.0 {
        return None;
    }
    let alignment = s.dot(&(wm * &t));
    Some(InteriorCandidate {
        score: alignment / d,
        s,
        t,
        lambda: None,
        alignment,
        inv_weight: d,
    })
}

/// Pair on the arc `cos θ (s₀, t₀) + sin θ (s₁, t₁)` with `s'Σ⁻¹t` closest
/// to `1/κ` from above.
fn mix_pairs(wm: &DMatrix<f64>, sigma: &[f64], kappa: f64, (a, b): (&Pair, &Pair)) -> Option<InteriorCandidate> {
    let target = 1.0 / kappa;
    if !(a.2 >= target) || !(b.2 < target) {
        return None;
    }
    let at = |theta: f64| -> Pair {
        let (sn, cs) = (sin(theta), cos(theta));
        let mut s = &a.0 * cs + &b.0 * sn;
        let mut t = &a.1 * cs + &b.1 * sn;
        let (ns, nt) = (s.norm(), t.norm());
        s /= ns;
        t /= nt;
        let d = inv_weight(&s, sigma, &t);
        (s, t, d)
    };
    let (mut lo, mut hi) = (0.0, core::f64::consts::FRAC_PI_2);
    let mut keep = a.clone();
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let p = at(mid);
        if !(p.0.norm() > 0.5) {
            return None;
        }
        if p.2 >= target {
            lo = mid;
            keep = p;
        } else {
            hi = mid;
        }
    }
    admissible(wm, keep.0, keep.1, keep.2, kappa)
}

/// Symmetric pair `s = t` maximising `s'Ws / s'Σ⁻¹s`, and its step
/// `τ* = 1 / (δ s'Σ⁻¹s - 1)`.
///
/// With `z = Σ^{-1/2} s` this is the top eigenvector of
/// `Σ^{1/2} sym(W) Σ^{1/2}`. Ties inside a repeated top eigenvalue go to
/// the direction with the smallest `s'Σ⁻¹s` (so `W = 0` gives `e₁`).
pub fn exterior_step(w: &ProjectedGradient, sigma: &[f64], delta: f64) -> Result<(DVector<f64>, f64)> {
    check_sizes(w, sigma)?;
    let r = sigma.len();
    let root: Vec<f64> = sigma.iter().map(|&x| sqrt(x)).collect();
    let wm = w.w();
    let b = DMatrix::from_fn(r, r, |i, j| 0.5 * (wm[(i, j)] + wm[(j, i)]) * root[i] * root[j]);
    let eig = symmetric_eigen(&b)?;
    let top = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = eig.eigenvalues.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
    let tied: Vec<usize> = (0..r)
        .filter(|&k| eig.eigenvalues[k] >= top - EIGEN_TIE_TOL * spread)
        .collect();
    let z = if tied.len() == 1 {
        eig.eigenvectors.column(tied[0]).into_owned()
    } else {
        let q = DMatrix::from_fn(r, tied.len(), |i, k| eig.eigenvectors[(i, tied[k])]);
        let mut qs = q.transpose();
        for (i, mut col) in qs.column_iter_mut().enumerate() {
            col *= sigma[i];
        }
        let inner = symmetric_eigen(&(&qs * &q))?;
        let best = (0..tied.len())
            .max_by(|&a, &b| inner.eigenvalues[a].total_cmp(&inner.eigenvalues[b]))
            .expect("non-empty");
        &q * inner.eigenvectors.column(best)
    };
    let mut s = DVector::from_fn(r, |i, _| root[i] * z[i]);
    s /= s.norm();
    let lead = s.iamax();
    if s[lead] < 0.0 {
        s.neg_mut();
    }
    let q = delta * inv_weight(&s, sigma, &s);
    if !(q > 1.0 + EXTERIOR_MARGIN) || !q.is_finite() {
        return Err(Error::DegenerateStep(q));
    }
    Ok((s, 1.0 / (q - 1.0)))
}

/// Selects the rank-drop pair and step for given `W`, `Σ`, `κ`, `δ`.
pub fn select_step(
    w: &ProjectedGradient,
    sigma: &[f64],
    kappa: f64,
    delta: f64,
    search: InteriorSearch,
) -> Result<RankDropStep> {
    check_sizes(w, sigma)?;
    let r = sigma.len();
    if r < 2 {
        return Err(Error::RankTooLow(r));
    }
    if kappa >= sigma[r - 1] {
        let mut cands = interior_candidates(w, sigma, kappa, ZERO_SV_TOL)?;
        if search == InteriorSearch::Augmented {
            cands.extend(active_constraint_candidate(w, sigma, kappa)?);
        }
        let mut best: Option<InteriorCandidate> = None;
        for c in cands {
            if best.as_ref().is_none_or(|b| c.score > b.score) {
                best = Some(c);
            }
        }
        if let Some(c) = best {
            let alpha = 1.0 / c.inv_weight;
            return Ok(RankDropStep {
                tau_star: alpha / (delta - alpha),
                s: c.s,
                t: c.t,
                case: DropCase::Interior,
                score: c.score,
                alignment: c.alignment,
            });
        }
    }
    let (s, tau_star) = exterior_step(w, sigma, delta)?;
    let alignment = s.dot(&(w.w() * &s));
    let score = alignment / inv_weight(&s, sigma, &s);
    Ok(RankDropStep {
        t: s.clone(),
        s,
        tau_star,
        case: DropCase::Exterior,
        score,
        alignment,
    })
}

/// Rank-drop step for the iterate `x` under the gradient `res`.
pub fn rank_drop_direction(
    x: &ThinSvd,
    res: &SparseResidual<'_>,
    delta: f64,
    search: InteriorSearch,
) -> Result<RankDropStep> {
    if x.rank() < 2 {
        return Err(Error::RankTooLow(x.rank()));
    }
    let k = kappa(x, delta)?;
    let w = projected_gradient(x, res)?;
    select_step(&w, x.singular_values(), k, delta, search)
}
