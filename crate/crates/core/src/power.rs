//! Power and sample-size calculations for paired comparisons, including
//! designs that account for multiple-testing corrections.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{nct_cdf, t_quantile};
use crate::error::{domain, Error, Result};

/// Smallest number of instances any design will return.
pub const MIN_INSTANCES: u64 = 5;
/// Upper bound on the instance search.
pub const DEFAULT_N_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// Upper-tailed: the alternative is a positive mean difference.
    OneSided,
}

impl Alternative {
    /// Critical value of the t statistic at level `alpha`.
    pub fn critical_value(self, alpha: f64, df: f64) -> Result<f64> {
        match self {
            Alternative::TwoSided => t_quantile(1.0 - alpha / 2.0, df),
            Alternative::OneSided => t_quantile(1.0 - alpha, df),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Correction {
    None,
    Bonferroni,
    HolmMean,
    HolmMedian,
    HolmWorst,
    HolmKprime { k_prime: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TestFamily {
    #[default]
    PairedT,
    Wilcoxon,
    Sign,
}

/// Asymptotic relative efficiencies of the nonparametric tests with respect
/// to the paired t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreConstants {
    pub wilcoxon: f64,
    pub sign: f64,
}

impl Default for AreConstants {
    fn default() -> Self {
        Self {
            wilcoxon: 0.86,
            sign: 2.0 / std::f64::consts::PI,
        }
    }
}

impl AreConstants {
    fn factor(&self, family: TestFamily) -> f64 {
        match family {
            TestFamily::PairedT => 1.0,
            TestFamily::Wilcoxon => self.wilcoxon,
            TestFamily::Sign => self.sign,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub alpha_f: f64,
    pub power_target: f64,
    pub mres: f64,
    pub num_comparisons: u32,
    #[serde(default)]
    pub alternative: Alternative,
    pub correction: Correction,
    #[serde(default)]
    pub test_family: TestFamily,
    #[serde(default)]
    pub are: AreConstants,
    #[serde(default = "default_cap")]
    pub n_cap: u64,
}

fn default_cap() -> u64 {
    DEFAULT_N_CAP
}

impl DesignSpec {
    pub fn new(
        alpha_f: f64,
        power_target: f64,
        mres: f64,
        num_comparisons: u32,
        alternative: Alternative,
        correction: Correction,
    ) -> Self {
        Self {
            alpha_f,
            power_target,
            mres,
            num_comparisons,
            alternative,
            correction,
            test_family: TestFamily::PairedT,
            are: AreConstants::default(),
            n_cap: DEFAULT_N_CAP,
        }
    }

    pub fn with_test_family(mut self, family: TestFamily) -> Self {
        self.test_family = family;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha_f > 0.0 && self.alpha_f < 1.0) {
            return bad(format!("alpha_f must lie in (0, 1), got {}", self.alpha_f));
        }
        if !(self.power_target > 0.0 && self.power_target < 1.0) {
            return bad(format!(
                "power_target must lie in (0, 1), got {}",
                self.power_target
            ));
        }
        if !(self.mres > 0.0 && self.mres.is_finite()) {
            return bad(format!("mres must be positive, got {}", self.mres));
        }
        if self.num_comparisons < 1 {
            return bad("num_comparisons must be at least 1".into());
        }
        match self.correction {
            Correction::None if self.num_comparisons != 1 => {
                return bad(format!(
                    "correction `none` requires a single comparison, got K = {}",
                    self.num_comparisons
                ))
            }
            Correction::HolmKprime { k_prime }
                if k_prime < 1 || k_prime > self.num_comparisons =>
            {
                return bad(format!(
                    "k_prime must lie in [1, {}], got {k_prime}",
                    self.num_comparisons
                ))
            }
            _ => {}
        }
        if !(self.are.wilcoxon > 0.0 && self.are.wilcoxon <= 1.5)
            || !(self.are.sign > 0.0 && self.are.sign <= 1.5)
        {
            return bad("ARE constants must be positive".into());
        }
        if self.n_cap < MIN_INSTANCES {
            return bad(format!("n_cap must be at least {MIN_INSTANCES}"));
        }
        Ok(())
    }

    /// Holm significance level for rank `r` (1-based).
    pub fn holm_level(&self, rank: u32) -> f64 {
        holm_level(self.alpha_f, self.num_comparisons, rank)
    }
}

/// `alpha_f / (K - r + 1)`.
pub fn holm_level(alpha_f: f64, k: u32, rank: u32) -> f64 {
    alpha_f / f64::from(k - rank + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub n_instances: u64,
    /// Instances a paired t-test would need; differs from `n_instances` only
    /// for the nonparametric test families.
    pub n_paired_t: u64,
    pub alternative: Alternative,
    /// Power of the rank-r test at its Holm level, evaluated at `n_paired_t`.
    pub per_rank_power: Vec<f64>,
    pub mean_power: f64,
    pub min_power: f64,
    pub max_power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCurvePoint {
    pub effect_size: f64,
    pub mean_power: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("significance level must lie in (0, 1), got {alpha}"));
    }
    Ok(())
}

/// Power of the paired t-test with `n` pairs against a true standardized
/// mean difference `d`. Two-sided power counts both rejection tails.
pub fn power_paired_t(alpha: f64, n: u64, d: f64, alternative: Alternative) -> Result<f64> {
    check_alpha(alpha)?;
    if n < 2 {
        return domain(format!("power needs at least 2 pairs, got {n}"));
    }
    if !d.is_finite() {
        return domain(format!("effect size must be finite, got {d}"));
    }
    let df = (n - 1) as f64;
    let ncp = d * (n as f64).sqrt();
    let crit = alternative.critical_value(alpha, df)?;
    let upper = 1.0 - nct_cdf(crit, df, ncp)?;
    let power = match alternative {
        Alternative::OneSided => upper,
        Alternative::TwoSided => upper + nct_cdf(-crit, df, ncp)?,
    };
    Ok(power.clamp(0.0, 1.0))
}

/// Whether `n` pairs satisfy the quantile criterion
/// `t_{crit}(n-1) <= t_{beta; |d| sqrt(n)}(n-1)`, i.e. the upper rejection
/// tail alone carries at least the target power.
pub fn meets_power(
    alpha: f64,
    power_target: f64,
    d_star: f64,
    n: u64,
    alternative: Alternative,
) -> Result<bool> {
    let df = (n - 1) as f64;
    let crit = alternative.critical_value(alpha, df)?;
    let beta = 1.0 - power_target;
    Ok(nct_cdf(crit, df, d_star.abs() * (n as f64).sqrt())? <= beta)
}

/// Smallest number of instances for a single paired t-test, never below
/// [`MIN_INSTANCES`].
pub fn n_paired_t(
    alpha: f64,
    power_target: f64,
    d_star: f64,
    alternative: Alternative,
) -> Result<u64> {
    n_paired_t_capped(alpha, power_target, d_star, alternative, DEFAULT_N_CAP)
}

pub fn n_paired_t_capped(
    alpha: f64,
    power_target: f64,
    d_star: f64,
    alternative: Alternative,
    cap: u64,
) -> Result<u64> {
    check_alpha(alpha)?;
    if !(power_target > 0.0 && power_target < 1.0) {
        return domain(format!("power target must lie in (0, 1), got {power_target}"));
    }
    if !(d_star.abs() > 0.0 && d_star.is_finite()) {
        return domain(format!("effect size must be nonzero and finite, got {d_star}"));
    }
    let ok = |n: u64| meets_power(alpha, power_target, d_star, n, alternative);
    if ok(MIN_INSTANCES)? {
        return Ok(MIN_INSTANCES);
    }
    // the criterion is monotone in n: gallop then bisect
    let mut lo = MIN_INSTANCES;
    let mut hi = MIN_INSTANCES * 2;
    loop {
        if hi > cap {
            if ok(cap)? {
                hi = cap;
                break;
            }
            return Err(Error::Overflow { cap });
        }
        if ok(hi)? {
            break;
        }
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Familywise error rate of `k` independent tests at level `alpha` when all
/// nulls hold.
pub fn fwer(alpha: f64, k: u32) -> Result<f64> {
    check_alpha(alpha)?;
    if k < 1 {
        return domain("number of tests must be at least 1");
    }
    Ok(-(f64::from(k) * (-alpha).ln_1p()).exp_m1())
}

/// Power of each Holm rank at `n` instances, rank 1 first.
pub fn holm_rank_powers(
    alpha_f: f64,
    k: u32,
    n: u64,
    d: f64,
    alternative: Alternative,
) -> Result<Vec<f64>> {
    (1..=k)
        .into_par_iter()
        .map(|r| power_paired_t(holm_level(alpha_f, k, r), n, d, alternative))
        .collect()
}

pub fn mean_holm_power(
    alpha_f: f64,
    k: u32,
    n: u64,
    d: f64,
    alternative: Alternative,
) -> Result<f64> {
    let powers = holm_rank_powers(alpha_f, k, n, d, alternative)?;
    Ok(powers.iter().sum::<f64>() / powers.len() as f64)
}

/// Level at which ranks `K - K' + 1 ..= K` and `K' ..= K` are all powered:
/// `alpha_f / max(K - K' + 1, K')`.
fn kprime_level(alpha_f: f64, k: u32, k_prime: u32) -> f64 {
    alpha_f / f64::from((k - k_prime + 1).max(k_prime))
}

/// Significance level used by the single-level designs, `None` for the
/// mean-power design.
fn design_level(spec: &DesignSpec) -> Option<f64> {
    let k = spec.num_comparisons;
    match spec.correction {
        Correction::None => Some(spec.alpha_f),
        Correction::Bonferroni | Correction::HolmWorst => Some(spec.alpha_f / f64::from(k)),
        Correction::HolmMedian => Some(kprime_level(spec.alpha_f, k, k.div_ceil(2))),
        Correction::HolmKprime { k_prime } => Some(kprime_level(spec.alpha_f, k, k_prime)),
        Correction::HolmMean => None,
    }
}

/// Whether the design criterion of `spec` holds at `n` paired-t instances.
pub fn design_criterion_holds(spec: &DesignSpec, n: u64) -> Result<bool> {
    match design_level(spec) {
        Some(level) => meets_power(level, spec.power_target, spec.mres, n, spec.alternative),
        None => Ok(mean_holm_power(
            spec.alpha_f,
            spec.num_comparisons,
            n,
            spec.mres,
            spec.alternative,
        )? >= spec.power_target),
    }
}

/// Number of instances and per-rank power profile for a multiple-comparison
/// experiment.
pub fn design(spec: &DesignSpec) -> Result<DesignResult> {
    spec.validate()?;
    let k = spec.num_comparisons;
    let n_t = match design_level(spec) {
        Some(level) => n_paired_t_capped(
            level,
            spec.power_target,
            spec.mres,
            spec.alternative,
            spec.n_cap,
        )?,
        None => {
            let start = n_paired_t_capped(
                spec.alpha_f,
                spec.power_target,
                spec.mres,
                spec.alternative,
                spec.n_cap,
            )?;
            let mut n = start - 1;
            loop {
                n += 1;
                if n > spec.n_cap {
                    return Err(Error::Overflow { cap: spec.n_cap });
                }
                if n < MIN_INSTANCES {
                    continue;
                }
                let mean =
                    mean_holm_power(spec.alpha_f, k, n, spec.mres, spec.alternative)?;
                if mean >= spec.power_target {
                    break n;
                }
            }
        }
    };

    let factor = spec.are.factor(spec.test_family);
    let n_final = if factor == 1.0 {
        n_t
    } else {
        ((n_t as f64) / factor).ceil() as u64
    };
    if n_final > spec.n_cap {
        return Err(Error::Overflow { cap: spec.n_cap });
    }

    let per_rank_power = holm_rank_powers(spec.alpha_f, k, n_t, spec.mres, spec.alternative)?;
    let mean_power = per_rank_power.iter().sum::<f64>() / f64::from(k);
    let min_power = per_rank_power.iter().copied().fold(f64::INFINITY, f64::min);
    let max_power = per_rank_power.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DesignResult {
        n_instances: n_final,
        n_paired_t: n_t,
        alternative: spec.alternative,
        per_rank_power,
        mean_power,
        min_power,
        max_power,
    })
}

/// Mean Holm-rank power at a fixed number of instances for each effect size.
pub fn power_curve(n_fixed: u64, spec: &DesignSpec, d_grid: &[f64]) -> Result<Vec<PowerCurvePoint>> {
    if d_grid.is_empty() {
        return Err(Error::Config("effect-size grid is empty".into()));
    }
    if n_fixed < 2 {
        return Err(Error::Config(format!("n_fixed must be at least 2, got {n_fixed}")));
    }
    check_alpha(spec.alpha_f)?;
    if spec.num_comparisons < 1 {
        return Err(Error::Config("num_comparisons must be at least 1".into()));
    }
    d_grid
        .iter()
        .map(|&d| {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::Config(format!("effect sizes must be nonnegative, got {d}")));
            }
            Ok(PowerCurvePoint {
                effect_size: d,
                mean_power: mean_holm_power(
                    spec.alpha_f,
                    spec.num_comparisons,
                    n_fixed,
                    d,
                    spec.alternative,
                )?,
            })
        })
        .collect()
}
