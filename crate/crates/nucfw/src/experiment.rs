//! Solving, δ tuning and verification on top of the core solvers.

use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nucfw_core::dataset::{delta_for, mu, split_and_normalize, synthetic, Dataset, SyntheticSpec};
use nucfw_core::objective::{rmse, SquaredLoss};
use nucfw_core::solver::{run, Clock, Hooks, Solution, StopReason, TraceRecord};
use nucfw_core::theorems::{self, PropertyReport, Scale};
use nucfw_core::{Observations, SolverConfig, Variant};
use rayon::prelude::*;

use crate::config::{DataSource, Radius, RunSpec};
use crate::movielens::read_ratings;
use crate::output;

/// Validation RMSE gains at or below this end the μ search.
pub const TUNE_IMPROVEMENT: f64 = 1e-3;

/// Wall-clock seconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct StdClock {
    start: Instant,
}

impl StdClock {
    pub fn start() -> Self {
        Self { start: Instant::now() }
    }
}

impl Clock for StdClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

/// A data source read into memory; MovieLens files are parsed once and
/// split per seed.
#[derive(Debug, Clone)]
pub enum Loaded {
    MovieLens { ratings: Observations, name: String },
    Synthetic { spec: SyntheticSpec, seed: Option<u64> },
}

pub fn load(source: &DataSource) -> Result<Loaded> {
    match source {
        DataSource::MovieLens { path, format } => {
            let r = read_ratings(path, *format).with_context(|| format!("loading {}", path.display()))?;
            log::info!(
                "{}: {} ratings, {} users, {} items",
                path.display(),
                r.observations.len(),
                r.distinct_users,
                r.distinct_items
            );
            if r.duplicates > 0 {
                log::warn!("{}: {} duplicate ratings replaced", path.display(), r.duplicates);
            }
            Ok(Loaded::MovieLens {
                ratings: r.observations,
                name: path.display().to_string(),
            })
        }
        DataSource::Synthetic { spec, seed } => {
            let mut probe = *spec;
            probe.seed = seed.unwrap_or(0);
            synthetic(&probe).context("invalid synthetic dataset")?;
            Ok(Loaded::Synthetic {
                spec: *spec,
                seed: *seed,
            })
        }
    }
}

impl Loaded {
    pub fn dataset(&self, seed: u64) -> Result<Dataset> {
        match self {
            Loaded::MovieLens { ratings, name } => {
                split_and_normalize(ratings, seed, name).with_context(|| format!("splitting {name}"))
            }
            Loaded::Synthetic { spec, seed: fixed } => {
                let mut spec = *spec;
                spec.seed = fixed.unwrap_or(seed);
                Ok(synthetic(&spec)?.0)
            }
        }
    }
}

/// `(δ, μ)`; `μ` is `None` for an explicit δ.
pub fn resolve_delta(radius: Radius, train: &Observations) -> Result<(f64, Option<f64>)> {
    Ok(match radius {
        Radius::Delta(d) => (d, None),
        Radius::MuIndex(j) => {
            let s = delta_for(train, j)?;
            (s.delta, Some(s.mu))
        }
        Radius::Mu(m) => {
            if train.is_empty() {
                bail!("empty training set");
            }
            (m * train.frobenius_norm(), Some(m))
        }
    })
}

pub fn solver_config(spec: &RunSpec, variant: Variant, seed: u64, delta: f64) -> SolverConfig {
    let mut cfg = SolverConfig::new(delta, variant);
    cfg.max_iters = spec.max_iters;
    cfg.rel_gap_tol = spec.rel_gap;
    cfg.rank_threshold = spec.rank_threshold;
    cfg.seed = seed;
    cfg
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub variant: Variant,
    pub seed: u64,
    pub delta: f64,
    pub iterations: usize,
    pub rank_drops: usize,
    pub objective: f64,
    pub gap: f64,
    pub final_rank: usize,
    pub max_rank: usize,
    pub test_rmse: f64,
    pub raw_test_rmse: f64,
    pub validation_rmse: f64,
    pub elapsed: f64,
    pub converged: bool,
}

/// One solver run on a prepared dataset.
pub fn solve(data: &Dataset, cfg: &SolverConfig) -> Result<(Solution, RunOutcome)> {
    let clock = StdClock::start();
    let mut observer = |r: &TraceRecord| log::trace!("{r:?}");
    let mut hooks = Hooks {
        clock: &clock,
        observer: &mut observer,
    };
    let sol = run(&SquaredLoss::new(&data.train), cfg, &mut hooks)
        .map_err(|e| anyhow::anyhow!("{} seed {}: {e}", cfg.variant, cfg.seed))?;
    let last = sol.trace.last().expect("a run records at least its final state");
    let outcome = RunOutcome {
        variant: cfg.variant,
        seed: cfg.seed,
        delta: cfg.delta,
        iterations: sol.trace.steps(),
        rank_drops: sol
            .trace
            .records()
            .iter()
            .filter(|r| r.step.is_some_and(|s| s.is_rank_drop()))
            .count(),
        objective: last.objective,
        gap: last.gap,
        final_rank: sol.x.rank(),
        max_rank: sol.trace.max_rank(),
        test_rmse: rmse(&sol.x, &data.test)?,
        raw_test_rmse: data.raw_rmse(&sol.x, &data.test)?,
        validation_rmse: rmse(&sol.x, &data.validation)?,
        elapsed: last.elapsed,
        converged: sol.stop == StopReason::RelativeGap,
    };
    log::info!(
        "{} seed {}: {} iterations, f = {:.6}, rank {} (max {}), test rmse {:.4}, {:.1}s",
        outcome.variant,
        outcome.seed,
        outcome.iterations,
        outcome.objective,
        outcome.final_rank,
        outcome.max_rank,
        outcome.test_rmse,
        outcome.elapsed
    );
    Ok((sol, outcome))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("cannot start worker threads")
}

/// Every (variant, seed) pair of `spec`. Each run writes its own
/// `trace_<variant>_<seed>.csv`; `summary.csv` is written only when all
/// runs succeed.
pub fn run_experiment(spec: &RunSpec) -> Result<Vec<RunOutcome>> {
    let loaded = load(&spec.source)?;
    let jobs: Vec<(Variant, u64)> = spec
        .variants
        .iter()
        .flat_map(|&v| spec.seeds.iter().map(move |&s| (v, s)))
        .collect();
    for &(variant, seed) in &jobs {
        solver_config(spec, variant, seed, 1.0).validate()?;
    }
    fs::create_dir_all(&spec.out).with_context(|| format!("cannot create {}", spec.out.display()))?;
    let results: Vec<Result<RunOutcome>> = pool(spec.jobs)?.install(|| {
        jobs.par_iter()
            .map(|&(variant, seed)| {
                let data = loaded.dataset(seed)?;
                let (delta, _) = resolve_delta(spec.radius, &data.train)?;
                let cfg = solver_config(spec, variant, seed, delta);
                let (sol, outcome) = solve(&data, &cfg)?;
                let path = spec.out.join(output::trace_file_name(variant, seed));
                output::write_trace(&path, &sol.trace)?;
                Ok(outcome)
            })
            .collect()
    });
    let outcomes = results.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = summarize(&outcomes, &spec.variants);
    output::write_summary(&spec.out.join("summary.csv"), &rows, spec.raw_rmse)?;
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: Variant,
    pub runs: usize,
    pub mean_test_rmse: f64,
    pub mean_raw_test_rmse: f64,
    pub mean_final_rank: f64,
    pub max_final_rank: usize,
    pub max_iterate_rank: usize,
    pub mean_iterations: f64,
    pub mean_objective: f64,
    pub mean_time_s: f64,
}

pub fn summarize(outcomes: &[RunOutcome], variants: &[Variant]) -> Vec<SummaryRow> {
    variants
        .iter()
        .filter_map(|&variant| {
            let runs: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.variant == variant).collect();
            if runs.is_empty() {
                return None;
            }
            let n = runs.len() as f64;
            let mean = |f: &dyn Fn(&RunOutcome) -> f64| runs.iter().map(|o| f(o)).sum::<f64>() / n;
            Some(SummaryRow {
                variant,
                runs: runs.len(),
                mean_test_rmse: mean(&|o| o.test_rmse),
                mean_raw_test_rmse: mean(&|o| o.raw_test_rmse),
                mean_final_rank: mean(&|o| o.final_rank as f64),
                max_final_rank: runs.iter().map(|o| o.final_rank).max().unwrap_or(0),
                max_iterate_rank: runs.iter().map(|o| o.max_rank).max().unwrap_or(0),
                mean_iterations: mean(&|o| o.iterations as f64),
                mean_objective: mean(&|o| o.objective),
                mean_time_s: mean(&|o| o.elapsed),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningRow {
    pub j: usize,
    pub mu: f64,
    /// Mean over seeds (each seed has its own training split).
    pub delta: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub rows: Vec<TuningRow>,
    pub selected: TuningRow,
}

/// Mean validation RMSE at grid point `j` over the seeds of `spec`.
pub fn grid_point(loaded: &Loaded, spec: &RunSpec, variant: Variant, j: usize) -> Result<TuningRow> {
    let p = pool(spec.jobs)?;
    let per_seed: Vec<Result<(f64, f64)>> = p.install(|| {
        spec.seeds
            .par_iter()
            .map(|&seed| {
                let data = loaded.dataset(seed)?;
                let (delta, _) = resolve_delta(Radius::MuIndex(j), &data.train)?;
                let (_, o) = solve(&data, &solver_config(spec, variant, seed, delta))?;
                Ok((delta, o.validation_rmse))
            })
            .collect()
    });
    let per_seed = per_seed.into_iter().collect::<Result<Vec<_>>>()?;
    let n = per_seed.len() as f64;
    Ok(TuningRow {
        j,
        mu: mu(j),
        delta: per_seed.iter().map(|p| p.0).sum::<f64>() / n,
        val_rmse: per_seed.iter().map(|p| p.1).sum::<f64>() / n,
    })
}

/// Walks `j = 0, 1, ...` until the validation RMSE improves on the previous
/// grid point by at most [`TUNE_IMPROVEMENT`] (or `max_j` is reached) and
/// selects the best point seen.
pub fn tune_delta(spec: &RunSpec, max_j: usize) -> Result<TuneOutcome> {
    let [variant] = spec.variants[..] else {
        bail!("tune-delta takes exactly one variant");
    };
    let loaded = load(&spec.source)?;
    let mut rows: Vec<TuningRow> = Vec::new();
    for j in 0..=max_j {
        let row = grid_point(&loaded, spec, variant, j)?;
        log::info!("j = {j}, mu = {:.1}: validation rmse {:.6}", row.mu, row.val_rmse);
        let stop = rows
            .last()
            .is_some_and(|prev| prev.val_rmse - row.val_rmse <= TUNE_IMPROVEMENT);
        rows.push(row);
        if stop {
            break;
        }
    }
    let selected = *rows
        .iter()
        .min_by(|a, b| a.val_rmse.total_cmp(&b.val_rmse))
        .expect("at least one grid point");
    Ok(TuneOutcome { rows, selected })
}

pub fn cmd_tune_delta(spec: &RunSpec, max_j: usize) -> Result<TuneOutcome> {
    let outcome = tune_delta(spec, max_j)?;
    fs::create_dir_all(&spec.out).with_context(|| format!("cannot create {}", spec.out.display()))?;
    output::write_tuning(&spec.out.join("tuning.csv"), &outcome.rows)?;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum VerifyScale {
    Quick,
    Full,
}

/// The property suite plus the convergence-bound check.
pub fn verify(scale: VerifyScale, seed: u64) -> Vec<PropertyReport> {
    let (props, run_iters) = match scale {
        VerifyScale::Quick => (Scale::QUICK, 200),
        VerifyScale::Full => (Scale::FULL, 1000),
    };
    let mut reports = theorems::suite(props, seed);
    reports.push(theorems::convergence_bound_check(seed, 1e-6, run_iters));
    reports
}

pub fn write_reports(reports: &[PropertyReport], out: &mut impl std::io::Write) -> std::io::Result<()> {
    for r in reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        write!(
            out,
            "{status} {:<34} trials={:<6} worst={:.3e}",
            r.name, r.trials, r.worst
        )?;
        if let Some(seed) = r.counterexample {
            write!(out, " failures={} first_failing_seed={seed}", r.failures)?;
        }
        if !r.note.is_empty() {
            write!(out, "  ({})", r.note)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Path-free label used in log lines.
pub fn describe(source: &DataSource) -> String {
    match source {
        DataSource::MovieLens { path, format } => format!("{} ({format})", Path::new(path).display()),
        DataSource::Synthetic { spec, seed } => format!(
            "synthetic {}x{} rank {} obs {} noise {} seed {}",
            spec.nrows,
            spec.ncols,
            spec.rank,
            spec.obs_fraction,
            spec.noise_std,
            seed.map_or_else(|| "per-run".to_string(), |s| s.to_string())
        ),
    }
}
