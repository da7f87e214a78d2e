//! CSV writers for traces, run summaries and the tuning table.

use std::path::Path;

use anyhow::{Context, Result};
use nucfw_core::{IterateTrace, Variant};

use crate::experiment::{SummaryRow, TuningRow};

pub const TRACE_HEADER: [&str; 8] = [
    "iter",
    "objective",
    "gap",
    "nuclear_norm",
    "rank",
    "step_type",
    "tau",
    "elapsed_s",
];

pub const SUMMARY_HEADER: [&str; 9] = [
    "variant",
    "runs",
    "mean_test_rmse",
    "mean_final_rank",
    "max_final_rank",
    "max_iterate_rank",
    "mean_iterations",
    "mean_objective",
    "mean_time_s",
];

pub fn trace_file_name(variant: Variant, seed: u64) -> String {
    format!("trace_{variant}_{seed}.csv")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))
}

/// One row per record. The final record has step type `none` and an
/// empty `tau`.
pub fn write_trace(path: &Path, trace: &IterateTrace) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRACE_HEADER)?;
    for r in trace.records() {
        let (step, tau) = match r.step {
            Some(s) => (s.name().to_string(), r.tau.to_string()),
            None => ("none".to_string(), String::new()),
        };
        w.write_record([
            r.iter.to_string(),
            r.objective.to_string(),
            r.gap.to_string(),
            r.nuclear_norm.to_string(),
            r.rank.to_string(),
            step,
            tau,
            r.elapsed.to_string(),
        ])?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn write_summary(path: &Path, rows: &[SummaryRow], raw_rmse: bool) -> Result<()> {
    let mut w = writer(path)?;
    let mut header: Vec<&str> = SUMMARY_HEADER.to_vec();
    if raw_rmse {
        header.push("mean_raw_test_rmse");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.variant.to_string(),
            r.runs.to_string(),
            r.mean_test_rmse.to_string(),
            r.mean_final_rank.to_string(),
            r.max_final_rank.to_string(),
            r.max_iterate_rank.to_string(),
            r.mean_iterations.to_string(),
            r.mean_objective.to_string(),
            r.mean_time_s.to_string(),
        ];
        if raw_rmse {
            rec.push(r.mean_raw_test_rmse.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn write_tuning(path: &Path, rows: &[TuningRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["j", "mu", "delta", "val_rmse"])?;
    for r in rows {
        w.write_record([
            r.j.to_string(),
            r.mu.to_string(),
            r.delta.to_string(),
            r.val_rmse.to_string(),
        ])?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nucfw_core::{StepType, TraceRecord};

    fn record(iter: usize, step: Option<StepType>) -> TraceRecord {
        TraceRecord {
            iter,
            objective: 2.5,
            gap: 0.125,
            gap_reused: false,
            nuclear_norm: 1.0,
            rank: 1,
            step,
            tau: 0.5,
            elapsed: 0.0,
        }
    }

    #[test]
    fn trace_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut trace = IterateTrace::new();
        trace.push(record(0, Some(StepType::RdInterior)));
        trace.push(record(1, None));
        write_trace(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,objective,gap,nuclear_norm,rank,step_type,tau,elapsed_s");
        assert_eq!(lines[1], "0,2.5,0.125,1,1,rd-interior,0.5,0");
        assert_eq!(lines[2], "1,2.5,0.125,1,1,none,,0");
    }

    #[test]
    fn trace_names() {
        assert_eq!(trace_file_name(Variant::InFace, 3), "trace_inface_3.csv");
    }
}
