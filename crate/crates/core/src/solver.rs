//! Frank-Wolfe variants over the nuclear ball: vanilla FW, away-step FW,
//! a max-step in-face baseline and rank-drop FW.
//!
//! All variants start from `X₀ = 0`, use exact line search and stop once
//! `gap / max(f, 1e-12) <= rel_gap_tol` or after `max_iters` steps.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::factored::{spectral_norm, RankOneOuter, ThinSvd, DEFAULT_RANK_THRESHOLD};
use crate::math::abs;
use crate::objective::{gap_on_support, Lmo, Objective, Observations, SparseResidual, SquaredLoss};
use crate::rank_drop::{projected_gradient, rank_drop_direction, DropCase, InteriorSearch};

/// Atoms closer than this (by `|<u,u'><v,v'> - 1|`) are merged.
pub const ATOM_MERGE_TOL: f64 = 1e-10;

/// Tolerance of the decomposition consistency check (spectral norm).
pub const DECOMPOSITION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Fw,
    Afw,
    InFace,
    Rdfw,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Fw, Variant::Afw, Variant::InFace, Variant::Rdfw];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Fw => "fw",
            Variant::Afw => "afw",
            Variant::InFace => "inface",
            Variant::Rdfw => "rdfw",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepType {
    Fw,
    Away,
    InFace,
    RdInterior,
    RdExterior,
}

impl StepType {
    pub fn name(self) -> &'static str {
        match self {
            StepType::Fw => "fw",
            StepType::Away => "away",
            StepType::InFace => "inface",
            StepType::RdInterior => "rd-interior",
            StepType::RdExterior => "rd-exterior",
        }
    }

    pub fn is_rank_drop(self) -> bool {
        matches!(self, StepType::RdInterior | StepType::RdExterior)
    }
}

impl fmt::Display for StepType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Radius of the nuclear ball.
    pub delta: f64,
    pub max_iters: usize,
    pub rel_gap_tol: f64,
    pub rank_threshold: f64,
    pub variant: Variant,
    pub seed: u64,
    pub power_tol: f64,
    pub power_max_iter: usize,
    pub interior_search: InteriorSearch,
    /// In-face steps are tried when `δ - ||X||_NN <= boundary_tol * δ`.
    pub boundary_tol: f64,
    /// Densify and compare the AFW decomposition after every step.
    pub check_decomposition: bool,
}

impl SolverConfig {
    pub fn new(delta: f64, variant: Variant) -> Self {
        Self {
            delta,
            max_iters: 1000,
            rel_gap_tol: 1e-2,
            rank_threshold: DEFAULT_RANK_THRESHOLD,
            variant,
            seed: 0,
            power_tol: 1e-9,
            power_max_iter: 500,
            interior_search: InteriorSearch::default(),
            boundary_tol: 1e-3,
            check_decomposition: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidParameter("delta must be positive and finite"));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1"));
        }
        if !(self.rel_gap_tol > 0.0) {
            return Err(Error::InvalidParameter("rel_gap_tol must be positive"));
        }
        if !(self.rank_threshold >= 0.0) {
            return Err(Error::InvalidParameter("rank_threshold must be non-negative"));
        }
        if !(self.power_tol > 0.0) || self.power_max_iter == 0 {
            return Err(Error::InvalidParameter(
                "power iteration needs tol > 0 and max_iter >= 1",
            ));
        }
        if !(self.boundary_tol >= 0.0) {
            return Err(Error::InvalidParameter("boundary_tol must be non-negative"));
        }
        Ok(())
    }

    fn lmo(&self) -> Lmo {
        Lmo {
            tol: self.power_tol,
            max_iter: self.power_max_iter,
        }
    }
}

/// State at iteration `iter` and the step taken from it. The last record of
/// a run describes the returned iterate and has no step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub gap: f64,
    /// The gap was carried over from an earlier iteration (no oracle call
    /// happened at this one).
    pub gap_reused: bool,
    pub nuclear_norm: f64,
    pub rank: usize,
    pub step: Option<StepType>,
    pub tau: f64,
    pub elapsed: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterateTrace {
    records: Vec<TraceRecord>,
}

impl IterateTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn max_rank(&self) -> usize {
        self.records.iter().map(|r| r.rank).max().unwrap_or(0)
    }

    /// Number of steps taken.
    pub fn steps(&self) -> usize {
        self.records.iter().filter(|r| r.step.is_some()).count()
    }

    pub fn count(&self, step: StepType) -> usize {
        self.records.iter().filter(|r| r.step == Some(step)).count()
    }
}

/// Upper bound `8 δ² L / (4 + N_fw)` on `f(X_k) - f*` for each record,
/// where `N_fw` counts the FW steps taken before iteration `k`.
pub fn convergence_bound(trace: &IterateTrace, delta: f64, lipschitz: f64) -> Vec<f64> {
    let mut fw = 0usize;
    trace
        .records()
        .iter()
        .map(|r| {
            let b = 8.0 * delta * delta * lipschitz / (4.0 + fw as f64);
            if r.step == Some(StepType::Fw) {
                fw += 1;
            }
            b
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    RelativeGap,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: ThinSvd,
    pub trace: IterateTrace,
    pub stop: StopReason,
}

impl Solution {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::RelativeGap
    }
}

/// A failed run, with the trace up to the failure.
#[derive(Debug, Clone)]
pub struct SolveError {
    pub error: Error,
    pub trace: IterateTrace,
}

impl fmt::Display for SolveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "solver failed after {} iterations: {}", self.trace.len(), self.error)
    }
}

impl core::error::Error for SolveError {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Source of elapsed time in seconds.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Reports zero elapsed time.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

/// Clock and per-record callback of a run.
pub struct Hooks<'a> {
    pub clock: &'a dyn Clock,
    pub observer: &'a mut dyn FnMut(&TraceRecord),
}

impl Hooks<'_> {
    fn emit(&mut self, trace: &mut IterateTrace, record: TraceRecord) {
        (self.observer)(&record);
        trace.push(record);
    }
}

/// Atoms `δ u v'` (unit `u`, `v`) with positive weights summing to at most
/// one; the zero atom carries the remaining weight implicitly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AtomicDecomposition {
    atoms: Vec<RankOneOuter>,
    weights: Vec<f64>,
}

impl AtomicDecomposition {
    pub fn new() -> Self {
        Self::default()
    }

    /// Decomposition of a thin SVD into its singular triplets.
    pub fn from_svd(x: &ThinSvd, delta: f64) -> Self {
        let mut out = Self::new();
        for (k, &s) in x.singular_values().iter().enumerate() {
            out.atoms.push(RankOneOuter::new(
                x.u().column(k).into_owned(),
                x.v().column(k).into_owned(),
                delta,
            ));
            out.weights.push(s / delta);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[RankOneOuter] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Adds `weight` to the atom `scale u v'`, merging with an existing atom
    /// pointing the same way.
    pub fn add(&mut self, atom: RankOneOuter, weight: f64) {
        let found = self.atoms.iter().position(|a| {
            abs(a.u.dot(&atom.u) * a.v.dot(&atom.v) * a.scale.signum() * atom.scale.signum() - 1.0) <= ATOM_MERGE_TOL
        });
        match found {
            Some(k) => self.weights[k] += weight,
            None => {
                self.atoms.push(atom);
                self.weights.push(weight);
            }
        }
    }

    /// Weights after `X ← (1 - τ) X`.
    pub fn shrink(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| *w *= factor);
        self.prune();
    }

    /// Index of the active atom most aligned with the gradient and the
    /// largest away step `α / (1 - α)` it allows.
    pub fn away_atom(&self, res: &SparseResidual<'_>) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (k, a) in self.atoms.iter().enumerate() {
            let score = a.scale * res.bilinear(a.u.as_slice(), a.v.as_slice());
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((k, score));
            }
        }
        best.map(|(k, _)| {
            let w = self.weights[k];
            (k, if w < 1.0 { w / (1.0 - w) } else { f64::INFINITY })
        })
    }

    /// Weights after `X ← (1 + τ) X - τ a_k`.
    pub fn away(&mut self, k: usize, tau: f64, tau_max: f64) {
        self.weights.iter_mut().for_each(|w| *w *= 1.0 + tau);
        self.weights[k] -= tau;
        if tau >= tau_max {
            self.weights[k] = 0.0;
        }
        self.prune();
    }

    fn prune(&mut self) {
        let mut k = 0;
        while k < self.atoms.len() {
            if self.weights[k] <= 0.0 {
                self.atoms.swap_remove(k);
                self.weights.swap_remove(k);
            } else {
                k += 1;
            }
        }
    }

    pub fn to_dense(&self, nrows: usize, ncols: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(nrows, ncols);
        for (a, &w) in self.atoms.iter().zip(&self.weights) {
            out.ger(w * a.scale, &a.u, &a.v, 1.0);
        }
        out
    }
}

struct State<'o, O: Objective> {
    objective: &'o O,
    x: ThinSvd,
    x_on: Vec<f64>,
    f: f64,
}

impl<'o, O: Objective> State<'o, O> {
    fn new(objective: &'o O, x: ThinSvd) -> Result<Self> {
        let x_on = objective.support().sample(&x)?;
        let f = objective.value_on_support(&x_on);
        Ok(Self { objective, x, x_on, f })
    }

    fn set(&mut self, x: ThinSvd) -> Result<()> {
        self.x_on = self.objective.support().sample(&x)?;
        self.f = self.objective.value_on_support(&self.x_on);
        self.x = x;
        Ok(())
    }
}

/// Runs `config.variant` from `X₀ = 0`.
pub fn run<O: Objective>(objective: &O, config: &SolverConfig, hooks: &mut Hooks<'_>) -> Result<Solution, SolveError> {
    let obs = objective.support();
    run_from(objective, config, ThinSvd::zero(obs.nrows(), obs.ncols()), hooks)
}

/// Runs `config.variant` from a feasible `x0`.
pub fn run_from<O: Objective>(
    objective: &O,
    config: &SolverConfig,
    x0: ThinSvd,
    hooks: &mut Hooks<'_>,
) -> Result<Solution, SolveError> {
    let mut trace = IterateTrace::new();
    let fail = |error: Error, trace: IterateTrace| SolveError { error, trace };
    if let Err(e) = config.validate() {
        return Err(fail(e, trace));
    }
    if x0.nuclear_norm() > config.delta * (1.0 + 1e-10) {
        return Err(fail(
            Error::Infeasible {
                nuclear_norm: x0.nuclear_norm(),
                delta: config.delta,
            },
            trace,
        ));
    }
    let mut solver = match Loop::new(objective, config, x0, hooks.clock.now()) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, trace)),
    };
    match solver.iterate(hooks, &mut trace) {
        Ok(stop) => Ok(Solution {
            x: solver.state.x,
            trace,
            stop,
        }),
        Err(e) => Err(fail(e, trace)),
    }
}

fn run_squared(obs: &Observations, config: &SolverConfig, variant: Variant) -> Result<Solution, SolveError> {
    let config = SolverConfig {
        variant,
        ..config.clone()
    };
    let mut sink = |_: &TraceRecord| {};
    let mut hooks = Hooks {
        clock: &NoClock,
        observer: &mut sink,
    };
    run(&SquaredLoss::new(obs), &config, &mut hooks)
}

pub fn run_fw(obs: &Observations, config: &SolverConfig) -> Result<Solution, SolveError> {
    run_squared(obs, config, Variant::Fw)
}

pub fn run_afw(obs: &Observations, config: &SolverConfig) -> Result<Solution, SolveError> {
    run_squared(obs, config, Variant::Afw)
}

pub fn run_inface(obs: &Observations, config: &SolverConfig) -> Result<Solution, SolveError> {
    run_squared(obs, config, Variant::InFace)
}

pub fn run_rdfw(obs: &Observations, config: &SolverConfig) -> Result<Solution, SolveError> {
    run_squared(obs, config, Variant::Rdfw)
}

struct Loop<'o, O: Objective> {
    config: &'o SolverConfig,
    state: State<'o, O>,
    atoms: Option<AtomicDecomposition>,
    lmo: Lmo,
    rng: ChaCha8Rng,
    start: f64,
    last_gap: f64,
}

/// What happened at one iteration.
struct Step {
    kind: StepType,
    tau: f64,
    next: ThinSvd,
}

impl<'o, O: Objective> Loop<'o, O> {
    fn new(objective: &'o O, config: &'o SolverConfig, x0: ThinSvd, start: f64) -> Result<Self> {
        let atoms = (config.variant == Variant::Afw).then(|| AtomicDecomposition::from_svd(&x0, config.delta));
        Ok(Self {
            config,
            state: State::new(objective, x0)?,
            atoms,
            lmo: config.lmo(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            start,
            last_gap: f64::INFINITY,
        })
    }

    fn record(&self, iter: usize, gap: f64, gap_reused: bool, step: Option<&Step>, now: f64) -> TraceRecord {
        TraceRecord {
            iter,
            objective: self.state.f,
            gap,
            gap_reused,
            nuclear_norm: self.state.x.nuclear_norm(),
            rank: self.state.x.rank(),
            step: step.map(|s| s.kind),
            tau: step.map_or(0.0, |s| s.tau),
            elapsed: now - self.start,
        }
    }

    fn iterate(&mut self, hooks: &mut Hooks<'_>, trace: &mut IterateTrace) -> Result<StopReason> {
        let cfg = self.config;
        let mut prev_rank_drop = true;
        for k in 0..=cfg.max_iters {
            let objective = self.state.objective;
            let res = objective.gradient_on_support(&self.state.x_on);

            if cfg.variant == Variant::Rdfw && !prev_rank_drop && k < cfg.max_iters {
                if let Some(step) = self.try_rank_drop(&res)? {
                    let rec = self.record(k, self.last_gap, true, Some(&step), hooks.clock.now());
                    hooks.emit(trace, rec);
                    self.state.set(step.next)?;
                    prev_rank_drop = true;
                    continue;
                }
            }
            prev_rank_drop = false;

            let Some(lmo) = self.lmo.solve(&res, cfg.delta, &mut self.rng) else {
                // Zero gradient: X is the unconstrained minimiser.
                let rec = self.record(k, 0.0, false, None, hooks.clock.now());
                hooks.emit(trace, rec);
                return Ok(StopReason::RelativeGap);
            };
            let gap = gap_on_support(&self.state.x_on, &res, &lmo.atom);
            self.last_gap = gap;
            if gap / self.state.f.max(1e-12) <= cfg.rel_gap_tol || k == cfg.max_iters {
                let rec = self.record(k, gap, false, None, hooks.clock.now());
                hooks.emit(trace, rec);
                return Ok(
                    if k == cfg.max_iters && gap / self.state.f.max(1e-12) > cfg.rel_gap_tol {
                        StopReason::MaxIters
                    } else {
                        StopReason::RelativeGap
                    },
                );
            }

            let step = match cfg.variant {
                Variant::Fw | Variant::Rdfw => self.fw_step(&lmo.atom)?,
                Variant::Afw => self.afw_step(&res, lmo.atom, gap)?,
                Variant::InFace => match self.inface_step(&res)? {
                    Some(s) => s,
                    None => self.fw_step(&lmo.atom)?,
                },
            };
            let rec = self.record(k, gap, false, Some(&step), hooks.clock.now());
            hooks.emit(trace, rec);
            self.state.set(step.next)?;
            if let (true, Some(atoms)) = (cfg.check_decomposition, &self.atoms) {
                let x = &self.state.x;
                let err = spectral_norm(&(atoms.to_dense(x.nrows(), x.ncols()) - x.to_dense()));
                if err > DECOMPOSITION_TOL {
                    return Err(Error::DecompositionMismatch(err));
                }
            }
        }
        unreachable!("loop returns at k == max_iters")
    }

    fn fw_step(&self, atom: &RankOneOuter) -> Result<Step> {
        let obj = self.state.objective;
        let z_on = obj
            .support()
            .sample_rank_one(atom.u.as_slice(), atom.v.as_slice(), atom.scale);
        let d: Vec<f64> = z_on.iter().zip(&self.state.x_on).map(|(z, x)| z - x).collect();
        let tau = obj.line_search(&self.state.x_on, &d, 1.0);
        let update = RankOneOuter::new(atom.u.clone(), atom.v.clone(), atom.scale * tau);
        let next = self
            .state
            .x
            .rank_one_update(1.0 - tau, &update, self.config.rank_threshold)?;
        Ok(Step {
            kind: StepType::Fw,
            tau,
            next,
        })
    }

    fn afw_step(&mut self, res: &SparseResidual<'_>, fw_atom: RankOneOuter, fw_gap: f64) -> Result<Step> {
        let delta = self.config.delta;
        let atoms = self.atoms.as_mut().expect("AFW keeps a decomposition");
        let away = atoms.away_atom(res).and_then(|(k, tau_max)| {
            let a = &atoms.atoms()[k];
            // <-∇f, X - a> = <∇f, a> - <∇f, X>.
            let away_gap = a.scale * res.bilinear(a.u.as_slice(), a.v.as_slice()) - res.inner(&self.state.x_on);
            (away_gap > fw_gap && tau_max.is_finite()).then_some((k, tau_max))
        });
        let obj = self.state.objective;
        match away {
            None => {
                let step = self.fw_step(&fw_atom)?;
                let atoms = self.atoms.as_mut().expect("AFW keeps a decomposition");
                atoms.shrink(1.0 - step.tau);
                if step.tau > 0.0 {
                    // Stored as δ u v' with the sign folded into u.
                    atoms.add(RankOneOuter::new(-fw_atom.u, fw_atom.v, delta), step.tau);
                }
                Ok(step)
            }
            Some((k, tau_max)) => {
                let a = self.atoms.as_ref().expect("AFW keeps a decomposition").atoms()[k].clone();
                let a_on = obj.support().sample_rank_one(a.u.as_slice(), a.v.as_slice(), a.scale);
                let d: Vec<f64> = self.state.x_on.iter().zip(&a_on).map(|(x, a)| x - a).collect();
                let tau = obj.line_search(&self.state.x_on, &d, tau_max);
                let update = RankOneOuter::new(a.u.clone(), a.v.clone(), -tau * a.scale);
                let next = self
                    .state
                    .x
                    .rank_one_update(1.0 + tau, &update, self.config.rank_threshold)?;
                self.atoms
                    .as_mut()
                    .expect("AFW keeps a decomposition")
                    .away(k, tau, tau_max);
                Ok(Step {
                    kind: StepType::Away,
                    tau,
                    next,
                })
            }
        }
    }

    /// Max-length away step inside the minimal face, when the iterate is on
    /// the boundary and the step does not increase the objective.
    fn inface_step(&mut self, res: &SparseResidual<'_>) -> Result<Option<Step>> {
        let cfg = self.config;
        let x = &self.state.x;
        if x.rank() < 2 || cfg.delta - x.nuclear_norm() > cfg.boundary_tol * cfg.delta {
            return Ok(None);
        }
        let w = projected_gradient(x, res)?;
        let sym = (w.w() + w.w().transpose()) * 0.5;
        let eig = crate::dense::symmetric_eigen(&sym)?;
        let top = eig.eigenvalues.imax();
        let mut s: DVector<f64> = eig.eigenvectors.column(top).into_owned();
        let lead = s.iamax();
        if s[lead] < 0.0 {
            s.neg_mut();
        }
        let q: f64 = s
            .iter()
            .zip(x.singular_values())
            .map(|(a, sig)| a * a / sig)
            .sum::<f64>()
            * cfg.delta;
        if !(q > 1.0 + crate::rank_drop::EXTERIOR_MARGIN) || !q.is_finite() {
            return Ok(None);
        }
        let tau = 1.0 / (q - 1.0);
        Ok(self.face_step(&s, &s, tau)?.map(|next| Step {
            kind: StepType::InFace,
            tau,
            next,
        }))
    }

    /// `(1 + τ) X - τ δ U s t' V'` if it does not increase the objective.
    fn face_step(&self, s: &DVector<f64>, t: &DVector<f64>, tau: f64) -> Result<Option<ThinSvd>> {
        let x = &self.state.x;
        let (us, vt) = (x.u() * s, x.v() * t);
        let obj = self.state.objective;
        let drop_on = obj
            .support()
            .sample_rank_one(us.as_slice(), vt.as_slice(), -tau * self.config.delta);
        let cand: Vec<f64> = self
            .state
            .x_on
            .iter()
            .zip(&drop_on)
            .map(|(x, d)| (1.0 + tau) * x + d)
            .collect();
        if !(obj.value_on_support(&cand) <= self.state.f) {
            return Ok(None);
        }
        let update = RankOneOuter::new(us, vt, -tau * self.config.delta);
        Ok(Some(x.rank_one_update(
            1.0 + tau,
            &update,
            self.config.rank_threshold,
        )?))
    }

    fn try_rank_drop(&mut self, res: &SparseResidual<'_>) -> Result<Option<Step>> {
        let cfg = self.config;
        if self.state.x.rank() < 2 {
            return Ok(None);
        }
        let step = match rank_drop_direction(&self.state.x, res, cfg.delta, cfg.interior_search) {
            Ok(step) => step,
            Err(e @ (Error::DegenerateStep(_) | Error::RankTooLow(_))) => {
                log::debug!("no rank-drop step: {e}");
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let kind = match step.case {
            DropCase::Interior => StepType::RdInterior,
            DropCase::Exterior => StepType::RdExterior,
        };
        Ok(self.face_step(&step.s, &step.t, step.tau_star)?.map(|next| Step {
            kind,
            tau: step.tau_star,
            next,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factored::testutil::*;
    use crate::factored::{dense_rank, full_svd_oracle};
    use crate::objective::Entry;
    use alloc::vec;
    use rand::{Rng, SeedableRng};

    fn full(y: &DMatrix<f64>) -> Observations {
        let entries = (0..y.nrows())
            .flat_map(|i| (0..y.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| Entry::new(i, j, y[(i, j)]))
            .collect();
        Observations::new(y.nrows(), y.ncols(), entries).unwrap()
    }

    fn partial(rng: &mut ChaCha8Rng, y: &DMatrix<f64>, p: f64) -> Observations {
        let entries = (0..y.nrows())
            .flat_map(|i| (0..y.ncols()).map(move |j| (i, j)))
            .filter(|_| rng.random_bool(p))
            .map(|(i, j)| Entry::new(i, j, y[(i, j)]))
            .collect();
        Observations::new(y.nrows(), y.ncols(), entries).unwrap()
    }

    fn run_with<O: Objective>(obj: &O, cfg: &SolverConfig, x0: ThinSvd) -> Solution {
        let mut sink = |_: &TraceRecord| {};
        let mut hooks = Hooks {
            clock: &NoClock,
            observer: &mut sink,
        };
        run_from(obj, cfg, x0, &mut hooks).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(1.0, Variant::Fw).validate().is_ok());
        assert!(SolverConfig::new(0.0, Variant::Fw).validate().is_err());
        let mut c = SolverConfig::new(1.0, Variant::Fw);
        c.max_iters = 0;
        assert!(c.validate().is_err());
        let mut c = SolverConfig::new(1.0, Variant::Fw);
        c.rel_gap_tol = 0.0;
        assert!(c.validate().is_err());
        let obs = Observations::empty(2, 2);
        assert!(matches!(
            run_fw(&obs, &SolverConfig::new(-1.0, Variant::Fw)),
            Err(SolveError { .. })
        ));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()), Some(v));
        }
        assert_eq!(Variant::parse("RDFW"), Some(Variant::Rdfw));
        assert_eq!(Variant::parse("pfw"), None);
    }

    #[test]
    fn fw_recovers_fully_observed_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = low_rank(&mut rng, 8, 6, 1);
        let obs = full(&y);
        let delta = full_svd_oracle(&y).nuclear_norm();
        let sol = run_fw(&obs, &SolverConfig::new(delta, Variant::Fw)).unwrap();
        assert!(sol.trace.len() <= 50);
        assert!(sol.trace.last().unwrap().objective < 1e-10);
        assert_eq!(sol.x.rank(), 1);
    }

    #[test]
    fn empty_observations_return_zero() {
        let obs = Observations::empty(3, 4);
        for v in Variant::ALL {
            let sol = run_squared(&obs, &SolverConfig::new(1.0, v), v).unwrap();
            assert_eq!(sol.x.rank(), 0);
            assert_eq!(sol.trace.len(), 1);
            assert_eq!(sol.trace.records()[0].gap, 0.0);
            assert!(sol.converged());
        }
    }

    #[test]
    fn bound_series() {
        let mut trace = IterateTrace::new();
        for (k, step) in [Some(StepType::Fw), Some(StepType::RdExterior), Some(StepType::Fw), None]
            .into_iter()
            .enumerate()
        {
            trace.push(TraceRecord {
                iter: k,
                objective: 0.0,
                gap: 0.0,
                gap_reused: false,
                nuclear_norm: 0.0,
                rank: 0,
                step,
                tau: 0.0,
                elapsed: 0.0,
            });
        }
        let b = convergence_bound(&trace, 3.0, 1.0);
        assert_eq!(b[0], 2.0 * 9.0);
        assert_eq!(b, vec![18.0, 72.0 / 5.0, 72.0 / 5.0, 12.0]);
        assert!(b.windows(2).all(|w| w[1] <= w[0]));
    }

    fn e(n: usize, i: usize) -> DVector<f64> {
        DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 })
    }

    #[test]
    fn away_atom_example() {
        let delta = 2.0;
        let mut atoms = AtomicDecomposition::new();
        atoms.add(RankOneOuter::new(e(2, 0), e(2, 0), delta), 0.6);
        atoms.add(RankOneOuter::new(e(2, 1), e(2, 1), delta), 0.4);
        let obs = Observations::from_triplets(2, 2, &[(0, 0, 0.0), (1, 1, 0.0)]).unwrap();
        let res = SparseResidual::new(&obs, vec![1.0, -1.0]).unwrap();
        let (k, tau_max) = atoms.away_atom(&res).unwrap();
        assert_eq!(atoms.atoms()[k].u, e(2, 0));
        assert!((tau_max - 1.5).abs() < 1e-12);

        atoms.away(k, tau_max, tau_max);
        assert_eq!(atoms.len(), 1);
        assert!((atoms.weights()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_away_step_drops_atom() {
        let mut atoms = AtomicDecomposition::new();
        atoms.add(RankOneOuter::new(e(2, 0), e(2, 0), 1.0), 0.5);
        let obs = Observations::from_triplets(2, 2, &[(0, 0, 0.0)]).unwrap();
        let res = SparseResidual::new(&obs, vec![1.0]).unwrap();
        let (k, tau_max) = atoms.away_atom(&res).unwrap();
        assert_eq!(tau_max, 1.0);
        atoms.away(k, tau_max, tau_max);
        assert!(atoms.is_empty());
    }

    #[test]
    fn atoms_merge() {
        let mut atoms = AtomicDecomposition::new();
        atoms.add(RankOneOuter::new(e(3, 1), e(2, 0), 1.0), 0.25);
        atoms.add(RankOneOuter::new(e(3, 1), e(2, 0), 1.0), 0.25);
        atoms.add(RankOneOuter::new(-e(3, 1), e(2, 0), 1.0), 0.1);
        assert_eq!(atoms.len(), 2);
        assert_eq!(atoms.weights()[0], 0.5);
    }

    fn noisy_problem(seed: u64) -> (Observations, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = low_rank(&mut rng, 20, 15, 3);
        let delta = full_svd_oracle(&y).nuclear_norm() * 0.8;
        y += gaussian(&mut rng, 20, 15) * 0.1;
        (partial(&mut rng, &y, 0.5), delta)
    }

    #[test]
    fn every_variant_stays_feasible() {
        for seed in 0..3 {
            let (obs, delta) = noisy_problem(seed);
            for v in Variant::ALL {
                let mut cfg = SolverConfig::new(delta, v);
                cfg.max_iters = 150;
                cfg.seed = seed;
                cfg.check_decomposition = v == Variant::Afw;
                let sol = run_squared(&obs, &cfg, v).unwrap();
                for r in sol.trace.records() {
                    assert!(r.nuclear_norm <= delta + 1e-8, "{v} {r:?}");
                }
                assert!(sol.x.nuclear_norm() <= delta + 1e-8);
            }
        }
    }

    #[test]
    fn rdfw_is_monotone_and_drops_one_rank_at_a_time() {
        for seed in 0..3 {
            let (obs, delta) = noisy_problem(10 + seed);
            let mut cfg = SolverConfig::new(delta, Variant::Rdfw);
            cfg.max_iters = 300;
            let sol = run_rdfw(&obs, &cfg).unwrap();
            let recs = sol.trace.records();
            assert!(sol.trace.count(StepType::RdInterior) + sol.trace.count(StepType::RdExterior) > 0);
            for w in recs.windows(2) {
                assert!(w[1].objective <= w[0].objective * (1.0 + 1e-12) + 1e-12);
                if w[0].step.is_some_and(StepType::is_rank_drop) {
                    assert_eq!(w[1].rank + 1, w[0].rank);
                    assert!(!w[1].step.is_some_and(StepType::is_rank_drop));
                    assert!(w[0].gap_reused);
                }
            }
        }
    }

    #[test]
    fn rdfw_matches_fw_while_rank_below_two() {
        let (obs, delta) = noisy_problem(4);
        let cfg = SolverConfig::new(delta, Variant::Fw);
        let fw = run_fw(&obs, &cfg).unwrap();
        let rd = run_rdfw(&obs, &cfg).unwrap();
        let mut compared = 0;
        for (a, b) in fw.trace.records().iter().zip(rd.trace.records()) {
            if a.rank >= 2 {
                break;
            }
            assert_eq!(a, b);
            compared += 1;
        }
        assert!(compared >= 2);
    }

    #[test]
    fn rank_one_problem_never_rank_drops() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = low_rank(&mut rng, 7, 5, 1);
        let obs = full(&y);
        let ysvd = full_svd_oracle(&y);
        let delta = ysvd.nuclear_norm();
        let x0 = ysvd.scaled(0.3);
        let sol = run_with(&SquaredLoss::new(&obs), &SolverConfig::new(delta, Variant::Rdfw), x0);
        assert!(sol.trace.records().iter().all(|r| r.rank <= 1));
        assert!(!sol
            .trace
            .records()
            .iter()
            .any(|r| r.step.is_some_and(StepType::is_rank_drop)));
    }

    #[test]
    fn inface_boundary_step_drops_rank() {
        let y = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]);
        let obs = full(&y);
        let x0 = ThinSvd::from_diagonal(2, 2, &[2.0, 1.0]).unwrap();
        let mut cfg = SolverConfig::new(3.0, Variant::InFace);
        cfg.max_iters = 1;
        let sol = run_with(&SquaredLoss::new(&obs), &cfg, x0.clone());
        let first = &sol.trace.records()[0];
        assert_eq!(first.step, Some(StepType::InFace));
        assert!((first.tau - 0.5).abs() < 1e-12);
        assert_eq!(dense_rank(&sol.x.to_dense(), 1e-6), 1);
        assert!((sol.x.to_dense() - y).amax() < 1e-12);
    }

    #[test]
    fn inface_interior_step_is_fw_step() {
        let (obs, delta) = noisy_problem(8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = full_svd_oracle(&low_rank(&mut rng, 20, 15, 3));
        let x0 = x0.scaled(0.5 * delta / x0.nuclear_norm());
        let mut cfg = SolverConfig::new(delta, Variant::InFace);
        cfg.max_iters = 1;
        let a = run_with(&SquaredLoss::new(&obs), &cfg, x0.clone());
        cfg.variant = Variant::Fw;
        let b = run_with(&SquaredLoss::new(&obs), &cfg, x0);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn afw_decomposition_tracks_iterate() {
        let (obs, delta) = noisy_problem(21);
        let mut cfg = SolverConfig::new(delta, Variant::Afw);
        cfg.max_iters = 200;
        cfg.check_decomposition = true;
        let sol = run_afw(&obs, &cfg).unwrap();
        assert!(sol.trace.count(StepType::Away) > 0);
    }

    #[test]
    fn observer_sees_every_record() {
        let (obs, delta) = noisy_problem(3);
        let cfg = SolverConfig::new(delta, Variant::Rdfw);
        let mut seen = Vec::new();
        let mut sink = |r: &TraceRecord| seen.push(r.iter);
        let mut hooks = Hooks {
            clock: &NoClock,
            observer: &mut sink,
        };
        let sol = run(&SquaredLoss::new(&obs), &cfg, &mut hooks).unwrap();
        assert_eq!(seen, (0..sol.trace.len()).collect::<Vec<_>>());
    }
}
