//! Final inference over per-instance summaries: paired difference vectors,
//! paired tests, Holm step-down decisions, rank-level confidence intervals
//! and effect-size estimates.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dist::{normal_cdf, t_cdf, t_quantile};
use crate::error::{Error, Result};
use crate::power::{holm_level, Alternative, TestFamily};
use crate::sampler::{comparison_pairs, median, Comparison, InstanceSampleReport, SummaryKind};

/// `|skewness|` above this flags a normality warning on a difference vector.
pub const SKEW_WARNING: f64 = 2.0;

/// Per-instance summary of each algorithm: `instance → algorithm → value`.
pub type SummaryTable = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDifferenceVector {
    pub pair: (String, String),
    pub comparison: Comparison,
    pub instances: Vec<String>,
    pub values: Vec<f64>,
}

/// Summaries of every (algorithm, instance) cell, or the list of missing cells.
pub fn summary_table(
    instances: &[String],
    algorithms: &[String],
    reports: &BTreeMap<String, InstanceSampleReport>,
    kind: SummaryKind,
) -> Result<SummaryTable> {
    let mut missing = Vec::new();
    let mut table = SummaryTable::new();
    for inst in instances {
        let mut row = BTreeMap::new();
        for alg in algorithms {
            let obs = reports.get(inst).and_then(|r| r.observations.get(alg));
            match obs.filter(|o| !o.is_empty()) {
                Some(o) => {
                    let v = match kind {
                        SummaryKind::Mean => o.values.iter().sum::<f64>() / o.len() as f64,
                        SummaryKind::Median => median(&o.values).expect("nonempty"),
                    };
                    row.insert(alg.clone(), v);
                }
                None => missing.push((alg.clone(), inst.clone())),
            }
        }
        table.insert(inst.clone(), row);
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteDesign(missing));
    }
    Ok(table)
}

/// One difference vector per hypothesis, computed instance by instance.
pub fn paired_differences(
    table: &SummaryTable,
    instances: &[String],
    algorithms: &[String],
    comparison: Comparison,
    reference_id: Option<&str>,
) -> Result<Vec<PairedDifferenceVector>> {
    let all_vs_one = match comparison {
        Comparison::PercentAllVsOne => {
            if reference_id.is_none() {
                return Err(Error::Config("percent-all-vs-one needs a reference".into()));
            }
            true
        }
        Comparison::PercentAllVsAll => false,
        Comparison::Simple => reference_id.is_some(),
    };
    if let Some(r) = reference_id.filter(|_| all_vs_one) {
        if !algorithms.iter().any(|a| a == r) {
            return Err(Error::Config(format!("reference `{r}` is not among the algorithms")));
        }
    }
    let mut missing = Vec::new();
    for inst in instances {
        for alg in algorithms {
            if table.get(inst).and_then(|r| r.get(alg)).is_none() {
                missing.push((alg.clone(), inst.clone()));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteDesign(missing));
    }

    comparison_pairs(algorithms, all_vs_one, reference_id)
        .into_iter()
        .map(|(i, j)| {
            let (ai, aj) = (&algorithms[i], &algorithms[j]);
            let values = instances
                .iter()
                .map(|inst| {
                    let row = &table[inst];
                    let (xi, xj) = (row[ai], row[aj]);
                    match comparison {
                        Comparison::Simple => Ok(xi - xj),
                        Comparison::PercentAllVsOne => {
                            if !(xi > 0.0) {
                                return Err(Error::Positivity(format!(
                                    "reference `{ai}` has mean {xi} on instance `{inst}`"
                                )));
                            }
                            Ok(1.0 - xj / xi)
                        }
                        Comparison::PercentAllVsAll => {
                            let gm = row.values().sum::<f64>() / row.len() as f64;
                            if !(gm > 0.0) {
                                return Err(Error::Positivity(format!(
                                    "grand mean {gm} on instance `{inst}`"
                                )));
                            }
                            Ok((xi - xj) / gm)
                        }
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(PairedDifferenceVector {
                pair: (ai.clone(), aj.clone()),
                comparison,
                instances: instances.to_vec(),
                values,
            })
        })
        .collect()
}

/// Outcome of a paired t-test on one difference vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestOutcome {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub df: u64,
    pub t_stat: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub d_hat: f64,
    /// Zero spread: `t` is undefined (zero mean) or infinite.
    pub degenerate: bool,
}

/// p-value of a t statistic with `df` degrees of freedom.
pub fn t_p_value(t: f64, df: f64, alternative: Alternative) -> Result<f64> {
    Ok(match alternative {
        Alternative::TwoSided => (2.0 * t_cdf(-t.abs(), df)?).min(1.0),
        Alternative::OneSided => t_cdf(-t, df)?,
    })
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Paired t-test with a two-sided `1 − alpha` confidence interval for the
/// mean difference, whatever the alternative.
pub fn t_test_paired(values: &[f64], alpha: f64, alternative: Alternative) -> Result<TTestOutcome> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "paired t-test needs at least 2 instances, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("difference vector contains non-finite values".into()));
    }
    let n = values.len();
    let df = (n - 1) as f64;
    let (mean, sd) = mean_sd(values);
    let se = sd / (n as f64).sqrt();
    if sd == 0.0 {
        let (t_stat, p_value, d_hat) = if mean == 0.0 {
            (0.0, 1.0, 0.0)
        } else {
            let t = mean.signum() * f64::INFINITY;
            let p = match alternative {
                Alternative::TwoSided => 0.0,
                Alternative::OneSided if mean > 0.0 => 0.0,
                Alternative::OneSided => 1.0,
            };
            (t, p, t)
        };
        return Ok(TTestOutcome {
            n,
            mean,
            sd,
            se,
            df: df as u64,
            t_stat,
            p_value,
            ci_low: mean,
            ci_high: mean,
            d_hat,
            degenerate: true,
        });
    }
    let t_stat = mean / se;
    let half = t_quantile(1.0 - alpha / 2.0, df)? * se;
    Ok(TTestOutcome {
        n,
        mean,
        sd,
        se,
        df: df as u64,
        t_stat,
        p_value: t_p_value(t_stat, df, alternative)?,
        ci_low: mean - half,
        ci_high: mean + half,
        d_hat: mean / sd,
        degenerate: false,
    })
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Exact binomial sign test on the nonzero differences.
pub fn sign_test(values: &[f64], alternative: Alternative) -> f64 {
    let pos = values.iter().filter(|&&v| v > 0.0).count() as u64;
    let n = values.iter().filter(|&&v| v != 0.0).count() as u64;
    if n == 0 {
        return 1.0;
    }
    let pmf = |k: u64| (ln_choose(n, k) - n as f64 * std::f64::consts::LN_2).exp();
    let upper: f64 = (pos..=n).map(pmf).sum();
    let lower: f64 = (0..=pos).map(pmf).sum();
    match alternative {
        Alternative::OneSided => upper.min(1.0),
        Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
    }
}

/// Wilcoxon signed-rank test. Exact null distribution for up to 50 nonzero
/// untied differences, otherwise the tie-corrected normal approximation with
/// continuity correction.
pub fn wilcoxon_signed_rank(values: &[f64], alternative: Alternative) -> f64 {
    let mut nz: Vec<f64> = values.iter().copied().filter(|&v| v != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return 1.0;
    }
    nz.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut ranks = vec![0.0; n];
    let mut ties = false;
    let mut tie_term = 0.0;
    let mut k = 0;
    while k < n {
        let mut e = k;
        while e + 1 < n && nz[e + 1].abs() == nz[k].abs() {
            e += 1;
        }
        let avg = (k + e) as f64 / 2.0 + 1.0;
        for r in &mut ranks[k..=e] {
            *r = avg;
        }
        let t = (e - k + 1) as f64;
        if t > 1.0 {
            ties = true;
            tie_term += t * t * t - t;
        }
        k = e + 1;
    }
    let w_plus: f64 = nz
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();

    let (upper, lower) = if !ties && n <= 50 {
        // counts[s] = number of sign assignments with W+ = s
        let max = n * (n + 1) / 2;
        let mut counts = vec![0f64; max + 1];
        counts[0] = 1.0;
        for r in 1..=n {
            for s in (r..=max).rev() {
                counts[s] += counts[s - r];
            }
        }
        let total = 2f64.powi(n as i32);
        let w = w_plus.round() as usize;
        let upper = counts[w..].iter().sum::<f64>() / total;
        let lower = counts[..=w].iter().sum::<f64>() / total;
        (upper, lower)
    } else {
        let nf = n as f64;
        let mu = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        if var <= 0.0 {
            return 1.0;
        }
        let sd = var.sqrt();
        let upper = 1.0 - normal_cdf((w_plus - mu - 0.5) / sd);
        let lower = normal_cdf((w_plus - mu + 0.5) / sd);
        (upper, lower)
    };
    match alternative {
        Alternative::OneSided => upper.min(1.0),
        Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolmDecision {
    pub pair: (String, String),
    pub p_value: f64,
    pub rank: u32,
    pub alpha_r: f64,
    pub adjusted_p: f64,
    pub reject: bool,
}

fn ranked(results: &[((String, String), f64)]) -> Vec<((String, String), f64)> {
    let mut sorted = results.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    sorted
}

/// Holm's step-down procedure: rank by ascending p-value (ties by pair id),
/// test rank r at `alpha_f / (K − r + 1)` and stop at the first retained
/// hypothesis.
pub fn holm_stepdown(results: &[((String, String), f64)], alpha_f: f64) -> Vec<HolmDecision> {
    let k = results.len() as u32;
    let mut rejecting = true;
    let mut running_max: f64 = 0.0;
    ranked(results)
        .into_iter()
        .enumerate()
        .map(|(idx, (pair, p))| {
            let rank = idx as u32 + 1;
            let alpha_r = holm_level(alpha_f, k, rank);
            rejecting = rejecting && p <= alpha_r;
            running_max = running_max.max((f64::from(k - rank + 1) * p).min(1.0));
            HolmDecision {
                pair,
                p_value: p,
                rank,
                alpha_r,
                adjusted_p: running_max,
                reject: rejecting,
            }
        })
        .collect()
}

/// Single-step Bonferroni decisions, in the same ranked order as Holm.
pub fn bonferroni(results: &[((String, String), f64)], alpha_f: f64) -> Vec<HolmDecision> {
    let k = results.len() as u32;
    let level = alpha_f / f64::from(k.max(1));
    ranked(results)
        .into_iter()
        .enumerate()
        .map(|(idx, (pair, p))| HolmDecision {
            pair,
            p_value: p,
            rank: idx as u32 + 1,
            alpha_r: level,
            adjusted_p: (f64::from(k) * p).min(1.0),
            reject: p <= level,
        })
        .collect()
}

mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float `{other}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub pair: (String, String),
    pub test_family: TestFamily,
    pub estimate: f64,
    pub se: f64,
    pub df: u64,
    #[serde(with = "nonfinite")]
    pub t_stat: f64,
    pub p_value: f64,
    pub rank: u32,
    pub alpha_r: f64,
    pub adjusted_p: f64,
    pub reject: bool,
    /// Two-sided interval at level `1 − alpha_r`; absent for the rank-based tests.
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    #[serde(with = "nonfinite")]
    pub d_hat: f64,
    pub degenerate: bool,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub normality_warning: bool,
}

/// Sample skewness and excess kurtosis (moment estimators); zero for
/// constant vectors.
pub fn shape_diagnostics(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if n < 3.0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return (0.0, 0.0);
    }
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

/// Tests every difference vector, applies Holm's procedure across them and
/// attaches rank-level confidence intervals. Rows come back in rank order.
pub fn analyze(
    vectors: &[PairedDifferenceVector],
    alpha_f: f64,
    alternative: Alternative,
    family: TestFamily,
) -> Result<Vec<ComparisonResult>> {
    if !(alpha_f > 0.0 && alpha_f < 1.0) {
        return Err(Error::Domain(format!("alpha_f must lie in (0, 1), got {alpha_f}")));
    }
    let tested: Vec<(TTestOutcome, f64)> = vectors
        .par_iter()
        .map(|v| {
            let t = t_test_paired(&v.values, alpha_f, alternative)?;
            let p = match family {
                TestFamily::PairedT => t.p_value,
                TestFamily::Wilcoxon => wilcoxon_signed_rank(&v.values, alternative),
                TestFamily::Sign => sign_test(&v.values, alternative),
            };
            Ok((t, p))
        })
        .collect::<Result<_>>()?;
    let by_pair: BTreeMap<(String, String), (usize, f64)> = vectors
        .iter()
        .zip(&tested)
        .enumerate()
        .map(|(k, (v, (_, p)))| (v.pair.clone(), (k, *p)))
        .collect();
    if by_pair.len() != vectors.len() {
        return Err(Error::Config("duplicate hypothesis pairs".into()));
    }
    let ps: Vec<((String, String), f64)> = vectors
        .iter()
        .zip(&tested)
        .map(|(v, (_, p))| (v.pair.clone(), *p))
        .collect();

    let mut results: Vec<ComparisonResult> = holm_stepdown(&ps, alpha_f)
        .into_iter()
        .map(|h| {
            let (k, _) = by_pair[&h.pair];
            let (t, _) = &tested[k];
            let (skewness, excess_kurtosis) = shape_diagnostics(&vectors[k].values);
            ComparisonResult {
                pair: h.pair,
                test_family: family,
                estimate: t.mean,
                se: t.se,
                df: t.df,
                t_stat: t.t_stat,
                p_value: h.p_value,
                rank: h.rank,
                alpha_r: h.alpha_r,
                adjusted_p: h.adjusted_p,
                reject: h.reject,
                ci_low: None,
                ci_high: None,
                d_hat: t.d_hat,
                degenerate: t.degenerate,
                skewness,
                excess_kurtosis,
                normality_warning: skewness.abs() > SKEW_WARNING,
            }
        })
        .collect();
    if family == TestFamily::PairedT {
        joint_confidence_intervals(&mut results)?;
    }
    Ok(results)
}

/// Sets each row's interval to `estimate ± t_{1 − alpha_r/2}(df) · se`.
pub fn joint_confidence_intervals(results: &mut [ComparisonResult]) -> Result<()> {
    for r in results.iter_mut() {
        if r.se == 0.0 || r.df == 0 {
            r.ci_low = Some(r.estimate);
            r.ci_high = Some(r.estimate);
            continue;
        }
        let half = t_quantile(1.0 - r.alpha_r / 2.0, r.df as f64)? * r.se;
        r.ci_low = Some(r.estimate - half);
        r.ci_high = Some(r.estimate + half);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSeRow {
    pub instance: String,
    pub algorithm_i: String,
    pub algorithm_j: String,
    pub estimate: f64,
    pub se: f64,
    pub total_runs: u64,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCountRow {
    pub instance: String,
    pub algorithm: String,
    pub runs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub alpha_f: f64,
    pub alternative: Alternative,
    pub comparison: Comparison,
    pub test_family: TestFamily,
    pub num_instances: usize,
    pub hypotheses: Vec<ComparisonResult>,
    pub instance_se: Vec<InstanceSeRow>,
    pub run_counts: Vec<RunCountRow>,
    pub rejections: usize,
    pub warnings: Vec<String>,
}

/// Collects hypothesis rows, per-instance standard errors and run counts
/// into one document. Rows are in instance order, then pair order.
pub fn summarize(
    instances: &[String],
    algorithms: &[String],
    reports: &BTreeMap<String, InstanceSampleReport>,
    results: &[ComparisonResult],
    alpha_f: f64,
    alternative: Alternative,
    comparison: Comparison,
    family: TestFamily,
) -> Report {
    let mut instance_se = Vec::new();
    let mut run_counts = Vec::new();
    let mut warnings = Vec::new();
    for inst in instances {
        let Some(rep) = reports.get(inst) else { continue };
        for p in &rep.pair_estimates {
            instance_se.push(InstanceSeRow {
                instance: inst.clone(),
                algorithm_i: p.pair.0.clone(),
                algorithm_j: p.pair.1.clone(),
                estimate: p.phi_hat,
                se: p.se,
                total_runs: rep.total_runs,
                budget_exhausted: rep.budget_exhausted,
            });
        }
        for alg in algorithms {
            let runs = rep.observations.get(alg).map_or(0, |o| o.len() as u64);
            run_counts.push(RunCountRow {
                instance: inst.clone(),
                algorithm: alg.clone(),
                runs,
            });
        }
        if rep.budget_exhausted {
            warnings.push(format!(
                "instance `{inst}`: budget exhausted with max se {:.4}",
                rep.max_se()
            ));
        }
        warnings.extend(rep.warnings.iter().map(|w| format!("instance `{inst}`: {w}")));
    }
    for r in results {
        if r.normality_warning {
            warnings.push(format!(
                "{} x {}: skewness {:.2} of the difference vector exceeds {SKEW_WARNING}",
                r.pair.0, r.pair.1, r.skewness
            ));
        }
    }
    Report {
        alpha_f,
        alternative,
        comparison,
        test_family: family,
        num_instances: instances.len(),
        hypotheses: results.to_vec(),
        instance_se,
        run_counts,
        rejections: results.iter().filter(|r| r.reject).count(),
        warnings,
    }
}
