use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use nucfw::experiment::{grid_point, load, tune_delta};
use nucfw::{DataSource, Format, Radius, RunSpec};
use nucfw_core::dataset::SyntheticSpec;
use nucfw_core::Variant;

const SMALL: &str = "synthetic:m=30,n=20,rank=3,obs=0.5,noise=0.1";

fn nucfw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nucfw")).args(args).output().unwrap()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

fn strip_elapsed(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn run_writes_a_trace_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = nucfw(&[
        "run",
        "--dataset",
        SMALL,
        "--variant",
        "rdfw",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(files(&out), ["summary.csv", "trace_rdfw_0.csv"]);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("variant,runs,mean_test_rmse,"));
    assert!(lines[1].starts_with("rdfw,1,"));
    let trace = std::fs::read_to_string(out.join("trace_rdfw_0.csv")).unwrap();
    assert_eq!(
        trace.lines().next().unwrap(),
        "iter,objective,gap,nuclear_norm,rank,step_type,tau,elapsed_s"
    );
    assert!(trace.lines().last().unwrap().contains(",none,,"));
}

#[test]
fn one_trace_per_seed_and_variant() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = nucfw(&[
        "run",
        "--dataset",
        SMALL,
        "--variant",
        "fw,rdfw",
        "--seeds",
        "0..5",
        "--jobs",
        "2",
        "--max-iters",
        "50",
        "--raw-rmse",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let names = files(&out);
    assert_eq!(names.len(), 11);
    for v in ["fw", "rdfw"] {
        for s in 0..5 {
            assert!(names.contains(&format!("trace_{v}_{s}.csv")));
        }
    }
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.lines().next().unwrap().ends_with(",mean_raw_test_rmse"));
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn invalid_dataset_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = nucfw(&["run", "--dataset", "/no/such/u.data", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/u.data"));
    assert!(!out.exists());
    let o = nucfw(&[
        "run",
        "--dataset",
        SMALL,
        "--rel-gap",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(!out.exists());
}

#[test]
fn malformed_file_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("u.data");
    std::fs::write(&data, "1\t1\t5\t0\n2\t2\t4\n").unwrap();
    let o = nucfw(&[
        "run",
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn config_file_with_overriding_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        format!(
            "dataset = {SMALL}\nvariant = fw\nmax_iters = 5\nrel_gap = 1e-12\nout = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let o = nucfw(&["run", "--config", cfg.to_str().unwrap(), "--max-iters", "12"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(out.join("trace_fw_0.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 12 + 1);
}

#[test]
fn identical_runs_differ_only_in_elapsed_time() {
    let dir = tempfile::tempdir().unwrap();
    let mut traces = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("o{k}"));
        let o = nucfw(&[
            "run",
            "--dataset",
            SMALL,
            "--variant",
            "all",
            "--seeds",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        traces.push(
            ["fw", "afw", "inface", "rdfw"]
                .map(|v| strip_elapsed(&std::fs::read_to_string(out.join(format!("trace_{v}_3.csv"))).unwrap())),
        );
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn tuning_lands_within_one_grid_step_of_the_grid_optimum() {
    let mut spec = RunSpec::synthetic(
        SyntheticSpec {
            nrows: 100,
            ncols: 80,
            rank: 1,
            obs_fraction: 0.1,
            noise_std: 0.3,
            seed: 11,
        },
        Radius::MuIndex(0),
    );
    if let DataSource::Synthetic { seed, .. } = &mut spec.source {
        *seed = None;
    }
    spec.seeds = vec![0, 1, 2];
    spec.max_iters = 1000;
    spec.rel_gap = 1e-4;
    let tuned = tune_delta(&spec, 8).unwrap();
    let loaded = load(&spec.source).unwrap();
    let grid: Vec<f64> = (0..=8)
        .map(|j| grid_point(&loaded, &spec, Variant::Rdfw, j).unwrap().val_rmse)
        .collect();
    let best = (0..grid.len()).min_by(|&a, &b| grid[a].total_cmp(&grid[b])).unwrap();
    assert!(best > 0 && best < 8, "optimum on the grid edge: {grid:?}");
    let picked = tuned.selected.j;
    assert!(picked.abs_diff(best) <= 1, "picked {picked} best {best} {grid:?}");
}

#[test]
fn tune_delta_rejects_an_explicit_radius() {
    let o = nucfw(&["tune-delta", "--dataset", SMALL, "--delta", "3"]);
    assert!(!o.status.success());
}

#[test]
fn tune_delta_writes_its_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = nucfw(&[
        "tune-delta",
        "--dataset",
        SMALL,
        "--max-j",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = std::fs::read_to_string(out.join("tuning.csv")).unwrap();
    assert_eq!(t.lines().next().unwrap(), "j,mu,delta,val_rmse");
    assert!(t.lines().count() >= 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("selected j="));
}

#[test]
fn quick_verification_passes_within_a_minute() {
    let t = Instant::now();
    let o = nucfw(&["verify", "quick"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    assert!(t.elapsed().as_secs() < 60);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 9);
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn movielens_format_flag() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ratings.dat");
    let mut text = String::new();
    for u in 1..=12 {
        for i in 1..=9 {
            if (u * 7 + i * 3) % 4 != 0 {
                text.push_str(&format!("{u}::{i}::{}::0\n", 1 + (u * i) % 5));
            }
        }
    }
    std::fs::write(&data, text).unwrap();
    let out = dir.path().join("out");
    let o = nucfw(&[
        "run",
        "--dataset",
        data.to_str().unwrap(),
        "--format",
        "ml1m",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(nucfw::parse_movielens(&data, Format::Ml100k).is_err());
}
