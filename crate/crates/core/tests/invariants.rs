use nalgebra::{DMatrix, DVector};
use nucfw_core::dataset::{split_and_normalize, synthetic, SyntheticSpec};
use nucfw_core::factored::{dense_nuclear_norm, spectral_norm};
use nucfw_core::objective::{exact_line_search, residual, value};
use nucfw_core::solver::{run_fw, run_rdfw, StepType};
use nucfw_core::theorems::reference_optimum;
use nucfw_core::{full_svd_oracle, Lmo, Observations, RankOneOuter, SolverConfig, ThinSvd, Variant};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(m: usize, n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, m * n).prop_map(move |v| DMatrix::from_vec(m, n, v))
}

fn low_rank(m: usize, n: usize, r: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (matrix(m, r), matrix(r, n)).prop_map(|(a, b)| a * b)
}

fn unit(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0..1.0f64, n)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(|v| {
            let d = DVector::from_vec(v);
            let n = d.norm();
            d / n
        })
}

fn pattern(m: usize, n: usize) -> impl Strategy<Value = Observations> {
    prop::collection::vec((0..m, 0..n, -3.0..3.0f64), 1..(m * n)).prop_map(move |t| {
        let mut seen = std::collections::BTreeMap::new();
        for (i, j, v) in t {
            seen.insert((i, j), v);
        }
        let trip: Vec<_> = seen.into_iter().map(|((i, j), v)| (i, j, v)).collect();
        Observations::from_triplets(m, n, &trip).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn update_matches_dense_expression(
        base in low_rank(30, 24, 4),
        u in unit(30),
        v in unit(24),
        a in 0.1..2.0f64,
        c in -3.0..3.0f64,
    ) {
        let x = full_svd_oracle(&base);
        let upd = RankOneOuter::new(u, v, c);
        let next = x.rank_one_update(a, &upd, 1e-6).unwrap();
        let expected = &base * a + upd.to_dense();
        let err = spectral_norm(&(next.to_dense() - &expected));
        prop_assert!(err <= 1e-8, "err {err:e} scale {} ranks {} {}", spectral_norm(&expected), x.rank(), next.rank());
        prop_assert!(next.rank() <= x.rank() + 1);
        prop_assert!(next.nuclear_norm() <= a * x.nuclear_norm() + c.abs() + 1e-10);
        prop_assert!(next.orthogonality_drift() <= 1e-8);
    }

    #[test]
    fn lmo_beats_every_dense_singular_pair(obs in pattern(7, 6), delta in 0.5..5.0f64, seed in any::<u64>()) {
        let x = ThinSvd::zero(7, 6);
        let res = residual(&x, &obs).unwrap();
        prop_assume!(!res.is_zero());
        let g = res.to_dense();
        let atom = Lmo::default().solve(&res, delta, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().atom;
        let lmo_value = atom.to_dense().dot(&g);
        let svd = nucfw_core::dense::thin_svd(&g).unwrap();
        let (us, vs) = (&svd.u, &svd.v);
        for i in 0..svd.s.len() {
            let z = us.column(i) * vs.column(i).transpose() * delta;
            prop_assert!(lmo_value <= -z.dot(&g).abs() + 1e-8, "lmo {lmo_value} pair {i} {} sv {}", -z.dot(&g).abs(), svd.s);
        }
    }

    #[test]
    fn line_search_beats_a_grid(obs in pattern(5, 5), dir in prop::collection::vec(-2.0..2.0f64, 25), tau_max in 0.01..3.0f64) {
        let x = ThinSvd::zero(5, 5);
        let res = residual(&x, &obs).unwrap();
        let d: Vec<f64> = (0..obs.len()).map(|k| dir[k]).collect();
        let phi = |t: f64| res.values().iter().zip(&d).map(|(r, di)| (r + t * di).powi(2)).sum::<f64>();
        let best = exact_line_search(&res, &d, tau_max);
        prop_assert!((0.0..=tau_max).contains(&best));
        for k in 0..=1000 {
            let t = tau_max * k as f64 / 1000.0;
            prop_assert!(phi(best) <= phi(t) + 1e-12 * (1.0 + phi(t)));
        }
    }

    #[test]
    fn gradient_matches_central_differences(base in low_rank(6, 5, 2), dir in matrix(6, 5), obs in pattern(6, 5)) {
        let x = full_svd_oracle(&base);
        let base = x.to_dense();
        let h = 1e-6;
        let f = |m: &DMatrix<f64>| obs.iter().map(|e| 0.5 * (m[(e.row, e.col)] - e.value).powi(2)).sum::<f64>();
        prop_assert!((f(&base) - value(&x, &obs).unwrap()).abs() <= 1e-10 * f(&base).max(1.0));
        let fd = (f(&(&base + &dir * h)) - f(&(&base - &dir * h))) / (2.0 * h);
        let exact = residual(&x, &obs).unwrap().to_dense().dot(&dir);
        prop_assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1.0));
    }

    #[test]
    fn split_partitions_and_round_trips(values in prop::collection::vec(0.0..5.0f64, 4..60), seed in any::<u64>()) {
        prop_assume!(values.iter().any(|v| (v - values[0]).abs() > 1e-6));
        let trip: Vec<_> = values.iter().enumerate().map(|(k, &v)| (k / 7, k % 7, v)).collect();
        let obs = Observations::from_triplets(9, 7, &trip).unwrap();
        let d = split_and_normalize(&obs, seed, "p").unwrap();
        let mut seen: Vec<(usize, usize, f64)> = Vec::new();
        for split in [&d.train, &d.validation, &d.test] {
            seen.extend(split.iter().map(|e| (e.row, e.col, d.denormalize(e.value))));
        }
        seen.sort_by_key(|s| (s.0, s.1));
        prop_assert_eq!(seen.len(), trip.len());
        for (got, want) in seen.iter().zip(&trip) {
            prop_assert_eq!((got.0, got.1), (want.0, want.1));
            prop_assert!((got.2 - want.2).abs() <= 1e-12 * want.2.abs().max(1.0));
        }
        let n = d.train.len() as f64;
        let mean = d.train.values().iter().sum::<f64>() / n;
        let var = d.train.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-6 && (var.sqrt() - 1.0).abs() < 1e-6);
    }
}

fn small_problem(seed: u64, noise: f64) -> (Observations, f64) {
    let spec = SyntheticSpec {
        nrows: 20,
        ncols: 15,
        rank: 3,
        obs_fraction: 0.5,
        noise_std: noise,
        seed,
    };
    let (data, truth) = synthetic(&spec).unwrap();
    (data.train, truth.nuclear_norm())
}

#[test]
fn gap_upper_bounds_suboptimality() {
    for seed in 0..3 {
        let (train, delta) = small_problem(seed, 0.2);
        let (f_ref, gap_ref) = reference_optimum(&train, delta, 1e-9, 50_000);
        let f_star = f_ref - gap_ref;
        for variant in Variant::ALL {
            let mut cfg = SolverConfig::new(delta, variant);
            cfg.max_iters = 300;
            cfg.rel_gap_tol = 1e-12;
            let sol = nucfw_core::solver::run(
                &nucfw_core::objective::SquaredLoss::new(&train),
                &cfg,
                &mut nucfw_core::solver::Hooks {
                    clock: &nucfw_core::solver::NoClock,
                    observer: &mut |_| {},
                },
            )
            .unwrap();
            for r in sol.trace.records().iter().filter(|r| !r.gap_reused) {
                assert!(r.gap >= r.objective - f_ref - 1e-9, "{variant} {r:?} f*={f_star}");
                assert!(r.objective >= f_star - 1e-9, "{variant} {r:?}");
            }
        }
    }
}

#[test]
fn every_variant_stays_feasible() {
    let (train, delta) = small_problem(4, 0.1);
    for variant in Variant::ALL {
        let mut cfg = SolverConfig::new(delta, variant);
        cfg.max_iters = 200;
        cfg.check_decomposition = variant == Variant::Afw;
        let sol = match variant {
            Variant::Fw => run_fw(&train, &cfg),
            _ => nucfw_core::solver::run(
                &nucfw_core::objective::SquaredLoss::new(&train),
                &cfg,
                &mut nucfw_core::solver::Hooks {
                    clock: &nucfw_core::solver::NoClock,
                    observer: &mut |_| {},
                },
            ),
        }
        .unwrap();
        for r in sol.trace.records() {
            assert!(r.nuclear_norm <= delta + 1e-8, "{variant} {r:?}");
        }
        assert!(dense_nuclear_norm(&sol.x.to_dense()) <= delta + 1e-8);
    }
}

#[test]
fn rdfw_is_monotone_and_drops_rank_one_at_a_time() {
    for seed in 0..4 {
        let (train, delta) = small_problem(seed, 0.3);
        let mut cfg = SolverConfig::new(delta * 0.6, Variant::Rdfw);
        cfg.max_iters = 300;
        cfg.seed = seed;
        let sol = run_rdfw(&train, &cfg).unwrap();
        let recs = sol.trace.records();
        for pair in recs.windows(2) {
            assert!(pair[1].objective <= pair[0].objective + 1e-12 * pair[0].objective.max(1.0));
            if let Some(step) = pair[0].step {
                if step.is_rank_drop() {
                    assert_eq!(pair[1].rank + 1, pair[0].rank, "{pair:?}");
                    assert!(
                        !pair[1].step.is_some_and(StepType::is_rank_drop),
                        "consecutive rank drops"
                    );
                }
            }
        }
    }
}

#[test]
fn fw_and_rdfw_agree_until_rank_two() {
    let (train, delta) = small_problem(9, 0.1);
    let mut cfg = SolverConfig::new(delta, Variant::Fw);
    cfg.max_iters = 40;
    let fw = run_fw(&train, &cfg).unwrap();
    cfg.variant = Variant::Rdfw;
    let rd = run_rdfw(&train, &cfg).unwrap();
    let early = |recs: &[nucfw_core::TraceRecord]| -> Vec<(f64, f64, usize)> {
        recs.iter()
            .take_while(|r| r.rank < 2)
            .map(|r| (r.objective, r.gap, r.rank))
            .collect()
    };
    let (a, b) = (early(fw.trace.records()), early(rd.trace.records()));
    assert!(a.len() >= 2);
    assert_eq!(a, b);
}

#[test]
fn identical_seeds_give_identical_traces() {
    let (train, delta) = small_problem(2, 0.1);
    for variant in Variant::ALL {
        let mut cfg = SolverConfig::new(delta, variant);
        cfg.max_iters = 80;
        cfg.seed = 17;
        let run = || {
            nucfw_core::solver::run(
                &nucfw_core::objective::SquaredLoss::new(&train),
                &cfg,
                &mut nucfw_core::solver::Hooks {
                    clock: &nucfw_core::solver::NoClock,
                    observer: &mut |_| {},
                },
            )
            .unwrap()
        };
        assert_eq!(run().trace, run().trace, "{variant}");
    }
}
