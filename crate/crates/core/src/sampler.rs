//! Adaptive allocation of repeated runs on a single instance.
//!
//! After `n0` runs of every algorithm, the sampler repeatedly finds the pair
//! of interest with the largest standard error and gives one more run to
//! whichever member of that pair is below its optimal share, until every
//! standard error is at most `se_star` or the instance budget is spent.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runner::{derive_seed, mix_seed, RunRecord, RunStatus, Runner};

/// Pairs whose standard errors differ by less than this are tied.
pub const SE_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub algorithm_id: String,
    pub instance_id: String,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl ObservationSet {
    pub fn new(algorithm_id: &str, instance_id: &str) -> Self {
        Self {
            algorithm_id: algorithm_id.to_owned(),
            instance_id: instance_id.to_owned(),
            values: Vec::new(),
            seeds: Vec::new(),
        }
    }

    pub fn push(&mut self, value: f64, seed: u64) {
        self.values.push(value);
        self.seeds.push(seed);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn summary(&self) -> Result<SummaryStats> {
        SummaryStats::from_values(&self.values)
    }

    pub fn median(&self) -> Option<f64> {
        median(&self.values)
    }
}

pub(crate) fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    })
}

/// Sample size, mean and (n−1)-denominator standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: u64,
    pub mean: f64,
    pub sd: f64,
}

impl SummaryStats {
    pub fn new(n: u64, mean: f64, sd: f64) -> Self {
        Self { n, mean, sd }
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 observations, got {}",
                values.len()
            )));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        Ok(Self {
            n: values.len() as u64,
            mean,
            sd: (ss / (n - 1.0)).sqrt(),
        })
    }

    fn check(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InsufficientData(format!(
                "need n >= 2, got {}",
                self.n
            )));
        }
        Ok(())
    }

    /// Squared standard error of the mean.
    fn var_of_mean(&self) -> f64 {
        self.sd * self.sd / self.n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Comparison {
    #[default]
    Simple,
    PercentAllVsOne,
    PercentAllVsAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SummaryKind {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub pair: (String, String),
    pub phi_hat: f64,
    pub se: f64,
    /// Optimal `n_i / n_j`; infinite when only `j` has zero spread.
    #[serde(with = "inf_as_null")]
    pub ratio_opt: f64,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub const DEFAULT_N0: u64 = 10;
pub const DEFAULT_BUDGET_PER_ALGORITHM: u64 = 50;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: u32 = 999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    #[serde(default)]
    pub comparison: Comparison,
    /// Reference algorithm; makes a simple comparison all-vs-one.
    #[serde(default)]
    pub reference_id: Option<String>,
    pub se_star: f64,
    #[serde(default = "default_n0")]
    pub n0: u64,
    /// Total run budget per instance; `50·A` when absent.
    #[serde(default)]
    pub n_max: Option<u64>,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: u32,
    #[serde(default)]
    pub summary: SummaryKind,
}

fn default_n0() -> u64 {
    DEFAULT_N0
}

fn default_resamples() -> u32 {
    DEFAULT_BOOTSTRAP_RESAMPLES
}

impl SamplingConfig {
    pub fn new(comparison: Comparison, se_star: f64) -> Self {
        Self {
            comparison,
            reference_id: None,
            se_star,
            n0: DEFAULT_N0,
            n_max: None,
            bootstrap_resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
            summary: SummaryKind::Mean,
        }
    }

    pub fn with_reference(mut self, id: &str) -> Self {
        self.reference_id = Some(id.to_owned());
        self
    }

    pub fn with_n0(mut self, n0: u64) -> Self {
        self.n0 = n0;
        self
    }

    pub fn with_n_max(mut self, n_max: u64) -> Self {
        self.n_max = Some(n_max);
        self
    }

    pub fn budget(&self, num_algorithms: usize) -> u64 {
        self.n_max
            .unwrap_or(DEFAULT_BUDGET_PER_ALGORITHM * num_algorithms as u64)
    }

    pub fn is_all_vs_one(&self) -> bool {
        match self.comparison {
            Comparison::PercentAllVsOne => true,
            Comparison::PercentAllVsAll => false,
            Comparison::Simple => self.reference_id.is_some(),
        }
    }

    pub fn validate(&self, algorithms: &[String]) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if algorithms.len() < 2 {
            return bad(format!("need at least 2 algorithms, got {}", algorithms.len()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in algorithms {
            if !seen.insert(a) {
                return bad(format!("duplicate algorithm `{a}`"));
            }
        }
        if !(self.se_star > 0.0 && self.se_star.is_finite()) {
            return bad(format!("se_star must be positive, got {}", self.se_star));
        }
        if self.n0 < 3 {
            return bad(format!("n0 must be at least 3, got {}", self.n0));
        }
        let a = algorithms.len() as u64;
        if self.budget(algorithms.len()) < a * self.n0 {
            return bad(format!(
                "n_max = {} is below A·n0 = {}",
                self.budget(algorithms.len()),
                a * self.n0
            ));
        }
        if self.bootstrap_resamples < 100 {
            return bad("bootstrap_resamples must be at least 100".into());
        }
        if self.comparison == Comparison::PercentAllVsOne && self.reference_id.is_none() {
            return bad("percent-all-vs-one needs a reference_id".into());
        }
        if self.is_all_vs_one() {
            let r = self.reference_id.as_deref().unwrap_or_default();
            if !algorithms.iter().any(|a| a == r) {
                return bad(format!("reference `{r}` is not among the algorithms"));
            }
        }
        Ok(())
    }

    /// Pairs of interest as index pairs into `algorithms`, in canonical order.
    pub fn pairs(&self, algorithms: &[String]) -> Vec<(usize, usize)> {
        comparison_pairs(algorithms, self.is_all_vs_one(), self.reference_id.as_deref())
    }
}

/// All `i < j` pairs, or `(reference, j)` for every other `j`.
pub fn comparison_pairs(
    algorithms: &[String],
    all_vs_one: bool,
    reference: Option<&str>,
) -> Vec<(usize, usize)> {
    if all_vs_one {
        let Some(r) = reference.and_then(|r| algorithms.iter().position(|a| a == r)) else {
            return Vec::new();
        };
        (0..algorithms.len())
            .filter(|&j| j != r)
            .map(|j| (r, j))
            .collect()
    } else {
        let a = algorithms.len();
        (0..a)
            .flat_map(|i| (i + 1..a).map(move |j| (i, j)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSampleReport {
    pub instance_id: String,
    pub observations: BTreeMap<String, ObservationSet>,
    pub pair_estimates: Vec<PairEstimate>,
    pub total_runs: u64,
    pub budget_exhausted: bool,
    pub iterations: u64,
    /// Largest standard error after the initial batch and after each iteration.
    pub max_se_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl InstanceSampleReport {
    pub fn max_se(&self) -> f64 {
        self.pair_estimates
            .iter()
            .map(|p| p.se)
            .fold(0.0, f64::max)
    }

    pub fn run_counts(&self) -> BTreeMap<String, u64> {
        self.observations
            .iter()
            .map(|(k, v)| (k.clone(), v.len() as u64))
            .collect()
    }
}

fn check_positive_mean(mean: f64, what: &str) -> Result<()> {
    if !(mean > f64::EPSILON) {
        return Err(Error::Positivity(format!(
            "{what} mean {mean} must be strictly positive for percent differences"
        )));
    }
    Ok(())
}

/// `sqrt(S_i²/n_i + S_j²/n_j)`.
pub fn se_simple(si: &SummaryStats, sj: &SummaryStats) -> Result<f64> {
    si.check()?;
    sj.check()?;
    Ok((si.var_of_mean() + sj.var_of_mean()).sqrt())
}

/// Standard error of `1 − X̄_j / X̄_1` against the reference `s_ref`.
pub fn se_percent_one(s_ref: &SummaryStats, sj: &SummaryStats) -> Result<f64> {
    s_ref.check()?;
    sj.check()?;
    check_positive_mean(s_ref.mean, "reference")?;
    let m1 = s_ref.mean;
    let c1 = s_ref.sd.powi(2) * sj.mean.powi(2) / m1.powi(4);
    let c2 = sj.sd.powi(2) / m1.powi(2);
    Ok((c1 / s_ref.n as f64 + c2 / sj.n as f64).sqrt())
}

/// Mean of the per-algorithm means.
pub fn grand_mean<'a>(stats: impl IntoIterator<Item = &'a SummaryStats>) -> f64 {
    let (sum, count) = stats
        .into_iter()
        .fold((0.0, 0usize), |(s, c), st| (s + st.mean, c + 1));
    sum / count as f64
}

/// Estimate `(X̄_i − X̄_j) / X̄_•` and its standard error, where `X̄_•` is
/// the mean of all algorithms' means.
pub fn percent_all_estimate(
    i: &str,
    j: &str,
    all_stats: &BTreeMap<String, SummaryStats>,
) -> Result<(f64, f64)> {
    let get = |id: &str| {
        all_stats
            .get(id)
            .ok_or_else(|| Error::Config(format!("no statistics for algorithm `{id}`")))
    };
    let (si, sj) = (get(i)?, get(j)?);
    for s in all_stats.values() {
        s.check()?;
    }
    let a = all_stats.len() as f64;
    let gm = grand_mean(all_stats.values());
    check_positive_mean(gm, "grand")?;
    let phi = (si.mean - sj.mean) / gm;
    let c1 = (1.0 + phi * phi / (a * a)) / (gm * gm);
    let others: f64 = all_stats
        .iter()
        .filter(|(k, _)| k.as_str() != i && k.as_str() != j)
        .map(|(_, s)| s.var_of_mean())
        .sum();
    let c2 = phi * phi / (gm * gm * a * a) * others;
    Ok((phi, (c1 * (si.var_of_mean() + sj.var_of_mean()) + c2).sqrt()))
}

/// Standard error of the grand-mean-normalized difference between `i` and `j`.
pub fn se_percent_all(
    i: &str,
    j: &str,
    all_stats: &BTreeMap<String, SummaryStats>,
) -> Result<f64> {
    percent_all_estimate(i, j, all_stats).map(|(_, se)| se)
}

/// Optimal run ratio `n_i / n_j`. For all-vs-one percent differences `si`
/// must be the reference. Infinite when only `S_j` is zero.
pub fn ratio_opt(comparison: Comparison, si: &SummaryStats, sj: &SummaryStats) -> Result<f64> {
    if si.sd == 0.0 && sj.sd == 0.0 {
        return Err(Error::InsufficientData(
            "both algorithms have zero spread; the run ratio is undefined".into(),
        ));
    }
    if sj.sd == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(match comparison {
        Comparison::Simple | Comparison::PercentAllVsAll => si.sd / sj.sd,
        Comparison::PercentAllVsOne => {
            check_positive_mean(si.mean, "reference")?;
            (si.sd / sj.sd) * (sj.mean / si.mean)
        }
    })
}

/// Which algorithm of the max-se pair gets the next run: `i` if
/// `n_i / n_j < ratio_opt`, else `j`.
pub fn choose_next<'a>(pair_max: &'a PairEstimate, counts: &BTreeMap<String, u64>) -> &'a str {
    let (i, j) = (&pair_max.pair.0, &pair_max.pair.1);
    let ni = counts.get(i).copied().unwrap_or(0) as f64;
    let nj = counts.get(j).copied().unwrap_or(0) as f64;
    if nj == 0.0 {
        return j;
    }
    if ni / nj < pair_max.ratio_opt {
        i
    } else {
        j
    }
}

/// Bootstrap standard error of `statistic(obs_i, obs_j)`, resampling both
/// lists independently with replacement.
pub fn bootstrap_se<F>(statistic: F, obs_i: &[f64], obs_j: &[f64], resamples: u32, seed: u64) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    bootstrap_parts(&statistic, obs_i, obs_j, resamples, seed, (true, true))
}

fn bootstrap_parts<F>(
    statistic: &F,
    obs_i: &[f64],
    obs_j: &[f64],
    resamples: u32,
    seed: u64,
    resample: (bool, bool),
) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> f64 + ?Sized,
{
    if obs_i.len() < 2 || obs_j.len() < 2 {
        return Err(Error::InsufficientData(
            "bootstrap needs at least 2 observations per algorithm".into(),
        ));
    }
    if resamples < 100 {
        return Err(Error::Config(format!(
            "bootstrap needs at least 100 resamples, got {resamples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bi = obs_i.to_vec();
    let mut bj = obs_j.to_vec();
    let mut draws = Vec::with_capacity(resamples as usize);
    for _ in 0..resamples {
        if resample.0 {
            for v in bi.iter_mut() {
                *v = obs_i[rng.random_range(0..obs_i.len())];
            }
        }
        if resample.1 {
            for v in bj.iter_mut() {
                *v = obs_j[rng.random_range(0..obs_j.len())];
            }
        }
        draws.push(statistic(&bi, &bj));
    }
    let first = draws[0];
    if draws.iter().all(|&d| d == first) {
        return Ok(0.0);
    }
    let m = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (draws.len() as f64 - 1.0);
    Ok(var.sqrt())
}

/// Pairwise statistic driving the sampler: one of the analytic differences,
/// or an arbitrary statistic whose standard error is bootstrapped.
#[derive(Clone, Copy)]
pub enum PairStatistic<'a> {
    Analytic(Comparison),
    Bootstrap(&'a (dyn Fn(&[f64], &[f64]) -> f64 + Sync)),
}

/// Deterministic per-run seeds for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPlan {
    pub global_seed: u64,
    pub instance_index: u64,
}

impl SeedPlan {
    pub fn new(global_seed: u64, instance_index: u64) -> Self {
        Self {
            global_seed,
            instance_index,
        }
    }

    pub fn run_seed(&self, algorithm_index: usize, run_index: u64, attempt: u64) -> u64 {
        derive_seed(
            self.global_seed,
            algorithm_index as u64,
            self.instance_index,
            run_index,
            attempt,
        )
    }

    fn bootstrap_seed(&self, iteration: u64, pair: (usize, usize), part: u64) -> u64 {
        mix_seed(
            self.global_seed ^ 0xB007_5743,
            &[self.instance_index, iteration, pair.0 as u64, pair.1 as u64, part],
        )
    }
}

/// One run with a single retry on a fresh seed.
fn run_with_retry<R: Runner + ?Sized>(
    runner: &R,
    algorithm: &str,
    instance: &str,
    algorithm_index: usize,
    run_index: u64,
    seeds: &SeedPlan,
) -> Result<(f64, u64)> {
    let mut last: Option<RunRecord> = None;
    for attempt in 0..2 {
        let seed = seeds.run_seed(algorithm_index, run_index, attempt);
        let rec = runner.run(algorithm, instance, seed);
        match (rec.status, rec.value) {
            (RunStatus::Ok, Some(v)) if v.is_finite() => return Ok((v, seed)),
            _ => last = Some(rec),
        }
    }
    let rec = last.expect("two attempts were made");
    Err(Error::Run {
        algorithm: algorithm.to_owned(),
        instance: instance.to_owned(),
        seed: rec.seed,
        message: format!(
            "{:?} after retry: {}",
            rec.status,
            rec.diagnostics.unwrap_or_else(|| "non-finite value".into())
        ),
    })
}

struct Estimator<'a> {
    statistic: PairStatistic<'a>,
    algorithms: &'a [String],
    pairs: Vec<(usize, usize)>,
    resamples: u32,
    seeds: SeedPlan,
}

impl Estimator<'_> {
    fn estimate(
        &self,
        obs: &[ObservationSet],
        iteration: u64,
    ) -> Result<Vec<PairEstimate>> {
        let stats: Vec<SummaryStats> = obs.iter().map(|o| o.summary()).collect::<Result<_>>()?;
        let by_id: BTreeMap<String, SummaryStats> = match self.statistic {
            PairStatistic::Analytic(Comparison::PercentAllVsAll) => self
                .algorithms
                .iter()
                .cloned()
                .zip(stats.iter().copied())
                .collect(),
            _ => BTreeMap::new(),
        };
        self.pairs
            .iter()
            .map(|&(i, j)| {
                let (si, sj) = (&stats[i], &stats[j]);
                let pair = (self.algorithms[i].clone(), self.algorithms[j].clone());
                let (phi_hat, se, ratio) = match self.statistic {
                    PairStatistic::Analytic(Comparison::Simple) => (
                        si.mean - sj.mean,
                        se_simple(si, sj)?,
                        ratio_or_neutral(ratio_opt(Comparison::Simple, si, sj))?,
                    ),
                    PairStatistic::Analytic(Comparison::PercentAllVsOne) => (
                        1.0 - sj.mean / si.mean,
                        se_percent_one(si, sj)?,
                        ratio_or_neutral(ratio_opt(Comparison::PercentAllVsOne, si, sj))?,
                    ),
                    PairStatistic::Analytic(Comparison::PercentAllVsAll) => {
                        let (phi, se) = percent_all_estimate(&pair.0, &pair.1, &by_id)?;
                        (
                            phi,
                            se,
                            ratio_or_neutral(ratio_opt(Comparison::PercentAllVsAll, si, sj))?,
                        )
                    }
                    PairStatistic::Bootstrap(f) => {
                        let (xi, xj) = (&obs[i].values, &obs[j].values);
                        let b = self.resamples;
                        let seed = |part| self.seeds.bootstrap_seed(iteration, (i, j), part);
                        let se = bootstrap_parts(f, xi, xj, b, seed(0), (true, true))?;
                        // sensitivity of the variance to each sample size
                        let vi = bootstrap_parts(f, xi, xj, b, seed(1), (true, false))?.powi(2);
                        let vj = bootstrap_parts(f, xi, xj, b, seed(2), (false, true))?.powi(2);
                        let ratio = if vi == 0.0 && vj == 0.0 {
                            1.0
                        } else if vj == 0.0 {
                            f64::INFINITY
                        } else {
                            (xi.len() as f64 / xj.len() as f64) * (vi / vj).sqrt()
                        };
                        (f(xi, xj), se, ratio)
                    }
                };
                Ok(PairEstimate {
                    pair,
                    phi_hat,
                    se,
                    ratio_opt: ratio,
                })
            })
            .collect()
    }
}

/// Both-zero spread gives no preference; such a pair has zero simple se and
/// is only selected through the third-party term of the all-vs-all percent se.
fn ratio_or_neutral(r: Result<f64>) -> Result<f64> {
    match r {
        Err(Error::InsufficientData(_)) => Ok(1.0),
        other => other,
    }
}

/// Index of the pair with the largest se; ties go to the earliest pair.
fn max_pair(estimates: &[PairEstimate]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, e) in estimates.iter().enumerate() {
        match best {
            Some((_, b)) if e.se <= b + SE_TIE_TOLERANCE => {}
            _ => best = Some((k, e.se)),
        }
    }
    best.map(|(k, _)| k)
}

/// Adaptive sampling of `algorithms` on one instance with an analytic
/// difference statistic.
pub fn sample_instance<R: Runner + ?Sized>(
    instance_id: &str,
    algorithms: &[String],
    runner: &R,
    config: &SamplingConfig,
    seeds: SeedPlan,
) -> Result<InstanceSampleReport> {
    sample_instance_with(
        instance_id,
        algorithms,
        runner,
        config,
        seeds,
        PairStatistic::Analytic(config.comparison),
    )
}

/// Adaptive sampling with an explicit pair statistic; bootstrap statistics
/// use the pair set implied by `config` (all-vs-one iff a reference is set).
pub fn sample_instance_with<R: Runner + ?Sized>(
    instance_id: &str,
    algorithms: &[String],
    runner: &R,
    config: &SamplingConfig,
    seeds: SeedPlan,
    statistic: PairStatistic<'_>,
) -> Result<InstanceSampleReport> {
    config.validate(algorithms)?;
    let n_max = config.budget(algorithms.len());
    let estimator = Estimator {
        statistic,
        algorithms,
        pairs: config.pairs(algorithms),
        resamples: config.bootstrap_resamples,
        seeds,
    };

    // initial batch: independent runs, safe to execute concurrently
    let initial: Vec<Vec<(f64, u64)>> = algorithms
        .par_iter()
        .enumerate()
        .map(|(k, alg)| {
            (0..config.n0)
                .map(|t| run_with_retry(runner, alg, instance_id, k, t, &seeds))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut obs: Vec<ObservationSet> = algorithms
        .iter()
        .zip(initial)
        .map(|(alg, runs)| {
            let mut set = ObservationSet::new(alg, instance_id);
            for (v, s) in runs {
                set.push(v, s);
            }
            set
        })
        .collect();

    let mut total: u64 = obs.iter().map(|o| o.len() as u64).sum();
    let mut iterations = 0u64;
    let mut estimates = estimator.estimate(&obs, 0)?;
    let mut trace = vec![estimates.iter().map(|e| e.se).fold(0.0, f64::max)];

    while estimates.iter().any(|e| e.se > config.se_star) && total < n_max {
        let Some(k) = max_pair(&estimates) else { break };
        let counts: BTreeMap<String, u64> = obs
            .iter()
            .map(|o| (o.algorithm_id.clone(), o.len() as u64))
            .collect();
        let chosen = choose_next(&estimates[k], &counts).to_owned();
        let idx = algorithms
            .iter()
            .position(|a| *a == chosen)
            .expect("chosen algorithm is one of the pair");
        let run_index = obs[idx].len() as u64;
        let (v, s) = run_with_retry(runner, &chosen, instance_id, idx, run_index, &seeds)?;
        obs[idx].push(v, s);
        total += 1;
        iterations += 1;
        estimates = estimator.estimate(&obs, iterations)?;
        trace.push(estimates.iter().map(|e| e.se).fold(0.0, f64::max));
    }

    let budget_exhausted = estimates.iter().any(|e| e.se > config.se_star);
    let warnings = fieller_warnings(config, statistic, &obs)?;
    Ok(InstanceSampleReport {
        instance_id: instance_id.to_owned(),
        observations: obs
            .into_iter()
            .map(|o| (o.algorithm_id.clone(), o))
            .collect(),
        pair_estimates: estimates,
        total_runs: total,
        budget_exhausted,
        iterations,
        max_se_trace: trace,
        warnings,
    })
}

/// Flags denominators whose coefficient of variation is too large for the
/// first-order ratio approximation: `S / X̄ >= 0.5 / sqrt(n)`.
fn fieller_warnings(
    config: &SamplingConfig,
    statistic: PairStatistic<'_>,
    obs: &[ObservationSet],
) -> Result<Vec<String>> {
    let mut out = Vec::new();
    match statistic {
        PairStatistic::Analytic(Comparison::PercentAllVsOne) => {
            let r = config.reference_id.as_deref().unwrap_or_default();
            if let Some(o) = obs.iter().find(|o| o.algorithm_id == r) {
                let s = o.summary()?;
                if s.sd / s.mean >= 0.5 / (s.n as f64).sqrt() {
                    out.push(format!(
                        "reference `{r}` has coefficient of variation {:.3} with n = {}; the ratio standard error approximation degrades",
                        s.sd / s.mean,
                        s.n
                    ));
                }
            }
        }
        PairStatistic::Analytic(Comparison::PercentAllVsAll) => {
            let stats: Vec<SummaryStats> = obs.iter().map(|o| o.summary()).collect::<Result<_>>()?;
            let a = stats.len() as f64;
            let gm = grand_mean(&stats);
            let sd_gm = stats.iter().map(|s| s.var_of_mean()).sum::<f64>().sqrt() / a;
            // same rule with S / sqrt(n) replaced by the grand mean's standard
            // error and n by the average run count
            let n_bar = stats.iter().map(|s| s.n as f64).sum::<f64>() / a;
            if !(gm > 0.0) || sd_gm / gm >= 0.5 / n_bar {
                out.push(format!(
                    "grand mean {gm:.4} has relative standard error {:.4} with average n = {n_bar:.1}; the ratio standard error approximation degrades",
                    sd_gm / gm
                ));
            }
        }
        _ => {}
    }
    Ok(out)
}
