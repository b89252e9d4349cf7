use proptest::prelude::*;
use xpdesign::power::{
    design, design_criterion_holds, fwer, n_paired_t, power_curve, power_paired_t, Alternative,
    Correction, DesignSpec, TestFamily, MIN_INSTANCES,
};

const TWO: Alternative = Alternative::TwoSided;
const ONE: Alternative = Alternative::OneSided;

fn spec(alpha: f64, pi: f64, d: f64, k: u32, alt: Alternative, c: Correction) -> DesignSpec {
    DesignSpec::new(alpha, pi, d, k, alt, c)
}

fn n_star(alpha: f64, pi: f64, d: f64, k: u32, alt: Alternative, c: Correction) -> u64 {
    design(&spec(alpha, pi, d, k, alt, c)).unwrap().n_instances
}

#[test]
fn power_matches_frozen_monte_carlo() {
    // 10^6 simulated paired t-tests with Normal(0.5, 1) differences: 0.899683, se 3e-4
    let p = power_paired_t(0.05, 44, 0.5, TWO).unwrap();
    assert!((p - 0.899_683).abs() < 0.0015, "{p}");
    assert!((p - 0.90).abs() < 0.005);
}

#[test]
fn n_paired_t_agrees_with_linear_scan() {
    let scan = (2u64..)
        .find(|&n| power_paired_t(0.05, n, 0.5, TWO).unwrap() >= 0.9)
        .unwrap();
    assert_eq!(scan, 44);
    assert_eq!(n_paired_t(0.05, 0.9, 0.5, TWO).unwrap(), 44);
    for &(a, p, d, alt) in &[(0.01, 0.8, 0.3, TWO), (0.05, 0.95, 0.8, ONE), (0.1, 0.7, 0.2, TWO)] {
        let scan = (MIN_INSTANCES..)
            .find(|&n| power_paired_t(a, n, d, alt).unwrap() >= p)
            .unwrap();
        let n = n_paired_t(a, p, d, alt).unwrap();
        assert!(n.abs_diff(scan) <= 1, "{n} vs {scan}");
    }
}

#[test]
fn huge_effect_hits_the_floor() {
    assert_eq!(n_paired_t(0.05, 0.8, 10.0, TWO).unwrap(), MIN_INSTANCES);
}

#[test]
fn fwer_examples() {
    assert!((fwer(0.05, 10).unwrap() - 0.401).abs() < 5e-4);
    assert!((fwer(0.03, 1).unwrap() - 0.03).abs() < 1e-15);
    assert!((fwer(0.01, 2).unwrap() - 0.0199).abs() < 1e-12);
}

#[test]
fn case_study_design() {
    let r = design(&spec(0.05, 0.8, 0.5, 21, TWO, Correction::HolmMean)).unwrap();
    assert_eq!(r.n_instances, 57);
    assert_eq!(r.alternative, TWO);
    assert_eq!(r.per_rank_power.len(), 21);
    let mean = r.per_rank_power.iter().sum::<f64>() / 21.0;
    assert!((mean - r.mean_power).abs() < 1e-15);
    for w in r.per_rank_power.windows(2) {
        assert!(w[1] >= w[0]);
    }
    assert_eq!(r.min_power, r.per_rank_power[0]);
    assert_eq!(r.max_power, r.per_rank_power[20]);
}

#[test]
fn single_comparison_needs_no_correction() {
    let plain = n_paired_t(0.05, 0.9, 0.5, TWO).unwrap();
    for c in [
        Correction::None,
        Correction::Bonferroni,
        Correction::HolmMean,
        Correction::HolmMedian,
        Correction::HolmWorst,
        Correction::HolmKprime { k_prime: 1 },
    ] {
        assert_eq!(n_star(0.05, 0.9, 0.5, 1, TWO, c), plain, "{c:?}");
    }
}

#[test]
fn correction_ordering() {
    for &(alpha, pi, d) in &[(0.05, 0.9, 0.5), (0.05, 0.8, 0.5), (0.01, 0.8, 0.3)] {
        for k in 2..=15 {
            let mean = n_star(alpha, pi, d, k, TWO, Correction::HolmMean);
            let median = n_star(alpha, pi, d, k, TWO, Correction::HolmMedian);
            let worst = n_star(alpha, pi, d, k, TWO, Correction::HolmWorst);
            let bonf = n_star(alpha, pi, d, k, TWO, Correction::Bonferroni);
            assert!(mean <= median, "K={k}: {mean} > {median}");
            assert!(median <= worst, "K={k}");
            assert_eq!(worst, bonf, "K={k}");
        }
    }
    assert!(
        n_star(0.05, 0.9, 0.5, 15, TWO, Correction::Bonferroni)
            > n_star(0.05, 0.9, 0.5, 15, TWO, Correction::HolmMean)
    );
    assert_eq!(
        n_star(0.05, 0.9, 0.5, 10, TWO, Correction::HolmWorst),
        n_star(0.05, 0.9, 0.5, 10, TWO, Correction::Bonferroni)
    );
}

#[test]
fn worst_and_kprime_power_profiles() {
    for k in 1..=12u32 {
        let r = design(&spec(0.05, 0.85, 0.4, k, TWO, Correction::HolmWorst)).unwrap();
        assert!(r.per_rank_power.iter().all(|&p| p >= 0.85));
        for kp in 1..=k {
            let r = design(&spec(0.05, 0.85, 0.4, k, TWO, Correction::HolmKprime { k_prime: kp }))
                .unwrap();
            let powered = r.per_rank_power.iter().filter(|&&p| p >= 0.85).count();
            assert!(powered >= kp as usize, "K={k} K'={kp}: {powered}");
        }
    }
}

#[test]
fn nonparametric_inflation() {
    let base = spec(0.05, 0.9, 0.5, 1, TWO, Correction::None);
    let w = design(&base.clone().with_test_family(TestFamily::Wilcoxon)).unwrap();
    assert_eq!(w.n_paired_t, 44);
    assert_eq!(w.n_instances, (44.0f64 / 0.86).ceil() as u64);
    let s = design(&base.with_test_family(TestFamily::Sign)).unwrap();
    assert_eq!(s.n_instances, (44.0 * std::f64::consts::PI / 2.0).ceil() as u64);
}

#[test]
fn design_minimality() {
    for c in [
        Correction::Bonferroni,
        Correction::HolmMean,
        Correction::HolmMedian,
        Correction::HolmWorst,
        Correction::HolmKprime { k_prime: 2 },
    ] {
        for k in [2u32, 3, 7, 21] {
            for alt in [TWO, ONE] {
                let s = spec(0.05, 0.8, 0.5, k, alt, c);
                let n = design(&s).unwrap().n_instances;
                assert!(design_criterion_holds(&s, n).unwrap());
                if n > MIN_INSTANCES {
                    assert!(!design_criterion_holds(&s, n - 1).unwrap(), "{c:?} K={k}");
                }
            }
        }
    }
}

#[test]
fn configuration_errors() {
    assert!(design(&spec(0.05, 0.8, 0.5, 3, TWO, Correction::None)).is_err());
    assert!(design(&spec(0.05, 0.8, 0.5, 3, TWO, Correction::HolmKprime { k_prime: 4 })).is_err());
    assert!(design(&spec(0.05, 0.8, 0.5, 0, TWO, Correction::HolmMean)).is_err());
    assert!(design(&spec(1.2, 0.8, 0.5, 2, TWO, Correction::HolmMean)).is_err());
    assert!(design(&spec(0.05, 0.8, -0.5, 2, TWO, Correction::HolmMean)).is_err());
}

#[test]
fn power_curve_properties() {
    let s = spec(0.05, 0.8, 0.25, 7, TWO, Correction::HolmMean);
    let grid: Vec<f64> = (0..=30).map(|k| k as f64 * 0.02).chain([0.001, 0.25]).collect();
    let mut pts = power_curve(200, &s, &grid).unwrap();
    let at = |d: f64, pts: &[xpdesign::power::PowerCurvePoint]| {
        pts.iter().find(|p| p.effect_size == d).unwrap().mean_power
    };
    let p = at(0.25, &pts);
    assert!((0.83..=0.87).contains(&p), "{p}");
    assert!(at(0.001, &pts) <= 0.06);
    pts.sort_by(|a, b| a.effect_size.total_cmp(&b.effect_size));
    for w in pts.windows(2) {
        assert!(w[1].mean_power >= w[0].mean_power - 1e-12);
    }
    assert!(power_curve(200, &s, &[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn n_monotone_in_effect_and_target(
        d in 0.2f64..1.5, dd in 0.01f64..0.5, pi in 0.6f64..0.9, dp in 0.01f64..0.09,
    ) {
        let n = n_paired_t(0.05, pi, d, TWO).unwrap();
        prop_assert!(n_paired_t(0.05, pi, d + dd, TWO).unwrap() <= n);
        prop_assert!(n_paired_t(0.05, pi + dp, d, TWO).unwrap() >= n);
    }

    #[test]
    fn one_sided_never_needs_more(k in 1u32..12, d in 0.2f64..1.2, pi in 0.6f64..0.95) {
        for c in [Correction::Bonferroni, Correction::HolmMean, Correction::HolmMedian] {
            let c = if k == 1 { Correction::None } else { c };
            prop_assert!(n_star(0.05, pi, d, k, ONE, c) <= n_star(0.05, pi, d, k, TWO, c));
        }
    }

    #[test]
    fn power_bounded_and_increasing_in_n(n in 2u64..300, d in -1.0f64..1.0, alpha in 0.001f64..0.2) {
        let p = power_paired_t(alpha, n, d, TWO).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        if d != 0.0 {
            prop_assert!(power_paired_t(alpha, n + 10, d, TWO).unwrap() >= p - 1e-12);
        }
    }
}
