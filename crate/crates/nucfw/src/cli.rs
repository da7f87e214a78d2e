//! Command-line interface.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{parse_seeds, parse_variants, ConfigFile, DataSource, Radius, RunSpec};
use crate::experiment::{self, VerifyScale};
use crate::movielens::Format;

#[derive(Debug, Parser)]
#[command(
    name = "nucfw",
    version,
    about = "Frank-Wolfe solvers with rank-drop steps for nuclear-norm constrained matrix completion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve with one or more variants and seeds; writes per-run traces and summary.csv.
    Run(CommonArgs),
    /// Walk the mu grid until the validation RMSE stops improving; writes tuning.csv.
    TuneDelta {
        #[command(flatten)]
        common: CommonArgs,
        /// Largest grid index tried.
        #[arg(long, default_value_t = 100)]
        max_j: usize,
    },
    /// Randomised property checks of the rank-drop and SVD machinery.
    Verify {
        #[arg(value_enum, default_value_t = VerifyScale::Quick)]
        scale: VerifyScale,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// `key = value` file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Rating file, or `synthetic:m=..,n=..,rank=..,obs=..,noise=..[,seed=..]`.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// fw, afw, inface, rdfw, a comma list, or all.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, conflicts_with_all = ["mu_index", "mu"])]
    pub delta: Option<f64>,
    /// delta = (2 + 0.2 j) ||Y_train||_F.
    #[arg(long, conflicts_with = "mu")]
    pub mu_index: Option<usize>,
    /// delta = mu ||Y_train||_F.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub rel_gap: Option<f64>,
    #[arg(long)]
    pub rank_threshold: Option<f64>,
    /// e.g. `0`, `0..5`, `1,4,9`.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also report test RMSE on the original rating scale.
    #[arg(long)]
    pub raw_rmse: bool,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<RunSpec> {
        let file = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let format = match self.format {
            Some(f) => f,
            None => file.parsed::<Format>("format")?.unwrap_or(Format::Ml100k),
        };
        let dataset = match &self.dataset {
            Some(d) => d.clone(),
            None => match file.get("dataset") {
                Some(d) => d.to_string(),
                None => bail!("no dataset given (use --dataset or a config file)"),
            },
        };
        let variants = parse_variants(self.variant.as_deref().or(file.get("variant")).unwrap_or("rdfw"))?;
        let seeds = parse_seeds(self.seeds.as_deref().or(file.get("seeds")).unwrap_or("0"))?;
        let radius = match (self.delta, self.mu_index, self.mu) {
            (Some(d), _, _) => Radius::Delta(d),
            (_, Some(j), _) => Radius::MuIndex(j),
            (_, _, Some(m)) => Radius::Mu(m),
            _ => {
                let d = file.parsed::<f64>("delta")?.map(Radius::Delta);
                let j = file.parsed::<usize>("mu_index")?.map(Radius::MuIndex);
                let m = file.parsed::<f64>("mu")?.map(Radius::Mu);
                match [d, j, m].into_iter().flatten().collect::<Vec<_>>()[..] {
                    [] => Radius::MuIndex(0),
                    [r] => r,
                    _ => bail!("config sets more than one of delta, mu_index, mu"),
                }
            }
        };
        if let Radius::Delta(d) | Radius::Mu(d) = radius {
            if !(d.is_finite() && d > 0.0) {
                bail!("the radius must be positive and finite, got {d}");
            }
        }
        let max_iters = pick(self.max_iters, file.parsed("max_iters")?, 1000);
        let rel_gap = pick(self.rel_gap, file.parsed("rel_gap")?, 1e-2);
        let rank_threshold = pick(
            self.rank_threshold,
            file.parsed("rank_threshold")?,
            nucfw_core::DEFAULT_RANK_THRESHOLD,
        );
        let jobs = pick(self.jobs, file.parsed("jobs")?, 1);
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        if !(rel_gap.is_finite() && rel_gap > 0.0) {
            bail!("--rel-gap must be positive, got {rel_gap}");
        }
        if !(rank_threshold.is_finite() && rank_threshold >= 0.0) {
            bail!("--rank-threshold must be non-negative, got {rank_threshold}");
        }
        let out = match &self.out {
            Some(o) => o.clone(),
            None => file
                .get("out")
                .map_or_else(|| PathBuf::from("nucfw-out"), PathBuf::from),
        };
        let raw_rmse = self.raw_rmse || file.parsed::<bool>("raw_rmse")?.unwrap_or(false);
        Ok(RunSpec {
            source: DataSource::parse(&dataset, format)?,
            variants,
            radius,
            max_iters,
            rel_gap,
            rank_threshold,
            seeds,
            jobs,
            out,
            raw_rmse,
        })
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Runs a parsed command line; returns the process exit code.
pub fn execute(cli: &Cli, stdout: &mut impl Write) -> Result<i32> {
    match &cli.command {
        Command::Run(args) => {
            let spec = args.resolve()?;
            log::info!("{}", experiment::describe(&spec.source));
            let outcomes = experiment::run_experiment(&spec)?;
            for row in experiment::summarize(&outcomes, &spec.variants) {
                writeln!(
                    stdout,
                    "{}: {} runs, test rmse {:.4}, final rank {:.1} (max {}), max iterate rank {}, {:.1} iterations, {:.2}s",
                    row.variant,
                    row.runs,
                    row.mean_test_rmse,
                    row.mean_final_rank,
                    row.max_final_rank,
                    row.max_iterate_rank,
                    row.mean_iterations,
                    row.mean_time_s
                )?;
            }
            writeln!(stdout, "wrote {}", spec.out.display())?;
            Ok(0)
        }
        Command::TuneDelta { common, max_j } => {
            if common.delta.is_some() || common.mu_index.is_some() || common.mu.is_some() {
                bail!("tune-delta chooses the radius itself; drop --delta, --mu-index and --mu");
            }
            let spec = common.resolve()?;
            let t = experiment::cmd_tune_delta(&spec, *max_j)?;
            for r in &t.rows {
                writeln!(
                    stdout,
                    "j={} mu={} delta={:.6} val_rmse={:.6}",
                    r.j, r.mu, r.delta, r.val_rmse
                )?;
            }
            writeln!(
                stdout,
                "selected j={} mu={} delta={:.6} val_rmse={:.6}",
                t.selected.j, t.selected.mu, t.selected.delta, t.selected.val_rmse
            )?;
            Ok(0)
        }
        Command::Verify { scale, seed } => {
            let reports = experiment::verify(*scale, *seed);
            experiment::write_reports(&reports, stdout)?;
            let failed = reports.iter().filter(|r| !r.passed()).count();
            writeln!(stdout, "{} of {} checks passed", reports.len() - failed, reports.len())?;
            Ok(if failed == 0 { 0 } else { 1 })
        }
    }
}
