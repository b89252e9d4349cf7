use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use xpdesign::runner::{RunRecord, RunnerSpec, SyntheticDistribution, SyntheticSpec};
use xpdesign::sampler::{
    bootstrap_se, comparison_pairs, grand_mean, sample_instance, sample_instance_with, se_simple,
    Comparison, InstanceSampleReport, PairStatistic, SamplingConfig, SeedPlan, SummaryStats,
};

fn names(a: usize) -> Vec<String> {
    (0..a).map(|k| format!("alg{k}")).collect()
}

fn gaussian(params: &[(f64, f64)]) -> RunnerSpec {
    let spec = params
        .iter()
        .enumerate()
        .fold(SyntheticSpec::new(SyntheticDistribution::Normal), |s, (k, &(m, sd))| {
            s.with_algorithm(&format!("alg{k}"), m, sd)
        });
    RunnerSpec::Synthetic(spec)
}

fn check_report(rep: &InstanceSampleReport, cfg: &SamplingConfig, a: usize) {
    let budget = cfg.budget(a);
    let all_below = rep.pair_estimates.iter().all(|p| p.se <= cfg.se_star);
    assert!(all_below ^ rep.budget_exhausted, "dichotomy violated");
    if rep.budget_exhausted {
        assert!(rep.total_runs >= budget);
    }
    let counts = rep.run_counts();
    assert_eq!(counts.values().sum::<u64>(), rep.total_runs);
    assert!(counts.values().all(|&n| n >= cfg.n0));
    assert_eq!(rep.total_runs, a as u64 * cfg.n0 + rep.iterations);
    assert!(rep.iterations <= budget.saturating_sub(a as u64 * cfg.n0));
    for o in rep.observations.values() {
        assert_eq!(o.values.len(), o.seeds.len());
    }
}

#[test]
fn deterministic_runners_stop_after_initial_batch() {
    let runner = gaussian(&[(5.0, 0.0), (7.0, 0.0)]);
    let cfg = SamplingConfig::new(Comparison::Simple, 0.01);
    let rep = sample_instance("x", &names(2), &runner, &cfg, SeedPlan::new(1, 0)).unwrap();
    assert_eq!(rep.total_runs, 20);
    assert_eq!(rep.iterations, 0);
    assert!(rep.pair_estimates.iter().all(|p| p.se == 0.0));
    assert!(!rep.budget_exhausted);
}

#[test]
fn five_gaussian_algorithms_meet_postcondition() {
    let runner = gaussian(&[(1.0, 0.2), (1.1, 0.4), (0.9, 0.3), (1.3, 0.5), (1.0, 0.1)]);
    let cfg = SamplingConfig::new(Comparison::Simple, 0.05).with_n_max(250);
    for inst in 0..10u64 {
        let rep = sample_instance(
            &format!("i{inst}"),
            &names(5),
            &runner,
            &cfg,
            SeedPlan::new(99, inst),
        )
        .unwrap();
        check_report(&rep, &cfg, 5);
        assert!(rep.max_se() <= 0.05 || rep.total_runs == 250);
        assert_eq!(rep.pair_estimates.len(), 10);
    }
}

#[test]
fn identical_seeds_give_identical_reports() {
    let runner = gaussian(&[(3.0, 1.0), (3.5, 2.0), (2.0, 0.5)]);
    let cfg = SamplingConfig::new(Comparison::PercentAllVsAll, 0.02).with_n_max(120);
    let run = || sample_instance("inst", &names(3), &runner, &cfg, SeedPlan::new(5, 2)).unwrap();
    let a = run();
    assert_eq!(a, run());
    let json = serde_json::to_string(&a).unwrap();
    let back: InstanceSampleReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, a);
}

#[test]
fn pair_counts() {
    for a in 2..8 {
        let algs = names(a);
        assert_eq!(comparison_pairs(&algs, true, Some("alg0")).len(), a - 1);
        assert_eq!(comparison_pairs(&algs, false, None).len(), a * (a - 1) / 2);
    }
}

/// Median over replicates of the max-se trace, each run to the same budget.
#[test]
fn greedy_median_trace_is_nonincreasing() {
    let runner = gaussian(&[(10.0, 1.0), (10.0, 3.0), (10.0, 2.0)]);
    let cfg = SamplingConfig::new(Comparison::Simple, 1e-9).with_n_max(150);
    let traces: Vec<Vec<f64>> = (0..1000u64)
        .map(|r| {
            sample_instance("g", &names(3), &runner, &cfg, SeedPlan::new(r, 0))
                .unwrap()
                .max_se_trace
        })
        .collect();
    let len = traces[0].len();
    assert!(traces.iter().all(|t| t.len() == len));
    let medians: Vec<f64> = (0..len)
        .map(|s| {
            let mut col: Vec<f64> = traces.iter().map(|t| t[s]).collect();
            col.sort_by(f64::total_cmp);
            0.5 * (col[499] + col[500])
        })
        .collect();
    for (s, w) in medians.windows(2).enumerate() {
        assert!(w[1] <= w[0], "step {s}: {} -> {}", w[0], w[1]);
    }
    assert!(medians[len - 1] < 0.5 * medians[0]);
}

#[test]
fn grand_mean_is_unbiased_with_unequal_sizes() {
    let mus = [4.0, 6.0, 9.0];
    let sds = [1.0, 3.0, 2.0];
    let ns = [5usize, 40, 13];
    let truth = mus.iter().sum::<f64>() / 3.0;
    let reps = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws: Vec<f64> = (0..reps)
        .map(|_| {
            let stats: Vec<SummaryStats> = (0..3)
                .map(|k| {
                    let d = Normal::new(mus[k], sds[k]).unwrap();
                    let v: Vec<f64> = (0..ns[k]).map(|_| d.sample(&mut rng)).collect();
                    SummaryStats::from_values(&v).unwrap()
                })
                .collect();
            grand_mean(&stats)
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / reps as f64;
    let sd = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
    let se = sd / (reps as f64).sqrt();
    assert!((mean - truth).abs() <= 3.0 * se, "{mean} vs {truth} (se {se})");
}

#[test]
fn bootstrap_matches_analytic_se() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let a: Vec<f64> = (0..50).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect();
    let b: Vec<f64> = (0..50).map(|_| Normal::new(1.0, 2.0).unwrap().sample(&mut rng)).collect();
    let diff = |x: &[f64], y: &[f64]| {
        x.iter().sum::<f64>() / x.len() as f64 - y.iter().sum::<f64>() / y.len() as f64
    };
    let analytic = se_simple(
        &SummaryStats::from_values(&a).unwrap(),
        &SummaryStats::from_values(&b).unwrap(),
    )
    .unwrap();
    let boot = bootstrap_se(diff, &a, &b, 2000, 77).unwrap();
    assert!((boot / analytic - 1.0).abs() < 0.10, "{boot} vs {analytic}");
    assert_eq!(boot, bootstrap_se(diff, &a, &b, 2000, 77).unwrap());
    assert_eq!(bootstrap_se(diff, &[2.0; 5], &[3.0; 7], 200, 1).unwrap(), 0.0);
}

#[test]
fn bootstrap_statistic_drives_the_sampler() {
    let runner = gaussian(&[(10.0, 1.0), (12.0, 3.0)]);
    let cfg = SamplingConfig::new(Comparison::Simple, 0.3).with_n_max(200);
    let median_diff = |x: &[f64], y: &[f64]| {
        let med = |v: &[f64]| {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            s[s.len() / 2]
        };
        med(x) - med(y)
    };
    let rep = sample_instance_with(
        "b",
        &names(2),
        &runner,
        &cfg,
        SeedPlan::new(3, 0),
        PairStatistic::Bootstrap(&median_diff),
    )
    .unwrap();
    check_report(&rep, &cfg, 2);
    let counts = rep.run_counts();
    assert!(counts["alg1"] > counts["alg0"]);
}

#[test]
fn failing_runner_is_fatal_after_one_retry() {
    let calls = std::sync::atomic::AtomicU64::new(0);
    let runner = |alg: &str, inst: &str, seed: u64| {
        calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        if alg == "alg1" {
            RunRecord::failed(alg, inst, seed, xpdesign::runner::RunStatus::Failed, "boom")
        } else {
            RunRecord::ok(alg, inst, seed, 1.0)
        }
    };
    let cfg = SamplingConfig::new(Comparison::Simple, 0.1).with_n0(3);
    let err = sample_instance("z", &names(2), &runner, &cfg, SeedPlan::new(0, 0)).unwrap_err();
    match err {
        xpdesign::Error::Run { algorithm, instance, .. } => {
            assert_eq!(algorithm, "alg1");
            assert_eq!(instance, "z");
        }
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_configurations_satisfy_invariants(
        a in 2usize..6,
        seed in any::<u64>(),
        se_star in 0.02f64..0.5,
        n0 in 3u64..8,
        extra in 0u64..120,
        percent in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<(f64, f64)> = (0..a)
            .map(|_| (5.0 + 5.0 * rand::Rng::random::<f64>(&mut rng), 0.05 + 2.0 * rand::Rng::random::<f64>(&mut rng)))
            .collect();
        let runner = gaussian(&params);
        let comparison = if percent { Comparison::PercentAllVsAll } else { Comparison::Simple };
        let cfg = SamplingConfig::new(comparison, se_star)
            .with_n0(n0)
            .with_n_max(a as u64 * n0 + extra);
        let rep = sample_instance("p", &names(a), &runner, &cfg, SeedPlan::new(seed, 1)).unwrap();
        check_report(&rep, &cfg, a);
        let by_pair: BTreeMap<_, _> = rep.pair_estimates.iter().map(|p| (p.pair.clone(), p.se)).collect();
        prop_assert_eq!(by_pair.len(), a * (a - 1) / 2);
    }
}
