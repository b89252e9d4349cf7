//! Monte Carlo check of a design: simulate complete experiments with known
//! effects, analyze them the way real data would be analyzed, and count
//! rejections.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{bonferroni, holm_stepdown, sign_test, t_p_value, wilcoxon_signed_rank};
use crate::error::{Error, Result};
use crate::power::{design, Correction, DesignResult, DesignSpec, TestFamily};
use crate::runner::mix_seed;

pub const MIN_SIMULATIONS: u64 = 1000;

/// Standardized true effect of each hypothesis. Differences are simulated as
/// independent `Normal(effect, 1)` draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TruthConfig {
    AllNull,
    Uniform { effect: f64 },
    PerHypothesis { effects: Vec<f64> },
}

impl TruthConfig {
    pub fn effects(&self, k: u32) -> Result<Vec<f64>> {
        let effects = match self {
            TruthConfig::AllNull => vec![0.0; k as usize],
            TruthConfig::Uniform { effect } => vec![*effect; k as usize],
            TruthConfig::PerHypothesis { effects } => {
                if effects.len() != k as usize {
                    return Err(Error::Config(format!(
                        "truth lists {} effects for {k} comparisons",
                        effects.len()
                    )));
                }
                effects.clone()
            }
        };
        if effects.iter().any(|e| !e.is_finite()) {
            return Err(Error::Config("truth effects must be finite".into()));
        }
        Ok(effects)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub rate: f64,
    /// Binomial standard error `sqrt(rate (1 - rate) / n_sim)`.
    pub se: f64,
}

impl RateEstimate {
    fn from_count(count: u64, n_sim: u64) -> Self {
        let rate = count as f64 / n_sim as f64;
        Self {
            rate,
            se: (rate * (1.0 - rate) / n_sim as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRate {
    pub index: usize,
    pub effect: f64,
    pub rejection: RateEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub design: DesignResult,
    pub n_instances: u64,
    pub n_sim: u64,
    pub seed: u64,
    /// Probability of at least one rejection among the true nulls.
    pub fwer: RateEstimate,
    pub per_hypothesis: Vec<HypothesisRate>,
    /// Probability that at least `r` hypotheses are rejected, `r = 1..=K`.
    pub per_rank: Vec<RateEstimate>,
    /// Mean rejection rate over the hypotheses with nonzero effect, `None`
    /// if every null is true.
    pub mean_power: Option<f64>,
}

/// Simulates `n_sim` experiments at the instance count `design(spec)` returns.
pub fn validate_design(
    spec: &DesignSpec,
    truth: &TruthConfig,
    n_sim: u64,
    seed: u64,
) -> Result<ValidationReport> {
    let result = design(spec)?;
    let n = result.n_instances;
    validate_at(spec, result, n, truth, n_sim, seed)
}

/// Same as [`validate_design`] at a caller-chosen number of instances.
pub fn validate_at(
    spec: &DesignSpec,
    design_result: DesignResult,
    n_instances: u64,
    truth: &TruthConfig,
    n_sim: u64,
    seed: u64,
) -> Result<ValidationReport> {
    spec.validate()?;
    if n_sim < MIN_SIMULATIONS {
        return Err(Error::Config(format!(
            "n_sim must be at least {MIN_SIMULATIONS}, got {n_sim}"
        )));
    }
    if n_instances < 2 {
        return Err(Error::Config("validation needs at least 2 instances".into()));
    }
    let k = spec.num_comparisons;
    let effects = truth.effects(k)?;
    let labels: Vec<(String, String)> = (0..k)
        .map(|h| ("h".to_string(), format!("{h:06}")))
        .collect();

    // per-simulation outcome: which hypotheses were rejected
    let outcomes: Vec<Vec<bool>> = (0..n_sim)
        .into_par_iter()
        .map(|sim| simulate_one(spec, &effects, &labels, n_instances, mix_seed(seed, &[sim])))
        .collect::<Result<_>>()?;

    let mut per_h = vec![0u64; k as usize];
    let mut at_least = vec![0u64; k as usize];
    let mut false_any = 0u64;
    for rej in &outcomes {
        let mut count = 0usize;
        let mut false_rej = false;
        for (h, &r) in rej.iter().enumerate() {
            if r {
                per_h[h] += 1;
                count += 1;
                false_rej |= effects[h] == 0.0;
            }
        }
        for c in &mut at_least[..count] {
            *c += 1;
        }
        false_any += u64::from(false_rej);
    }

    let per_hypothesis: Vec<HypothesisRate> = per_h
        .iter()
        .enumerate()
        .map(|(index, &c)| HypothesisRate {
            index,
            effect: effects[index],
            rejection: RateEstimate::from_count(c, n_sim),
        })
        .collect();
    let alt: Vec<f64> = per_hypothesis
        .iter()
        .filter(|h| h.effect != 0.0)
        .map(|h| h.rejection.rate)
        .collect();
    Ok(ValidationReport {
        design: design_result,
        n_instances,
        n_sim,
        seed,
        fwer: RateEstimate::from_count(false_any, n_sim),
        per_hypothesis,
        per_rank: at_least
            .iter()
            .map(|&c| RateEstimate::from_count(c, n_sim))
            .collect(),
        mean_power: (!alt.is_empty()).then(|| alt.iter().sum::<f64>() / alt.len() as f64),
    })
}

fn simulate_one(
    spec: &DesignSpec,
    effects: &[f64],
    labels: &[(String, String)],
    n: u64,
    seed: u64,
) -> Result<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; n as usize];
    let mut ps = Vec::with_capacity(effects.len());
    for (h, &d) in effects.iter().enumerate() {
        for v in values.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = d + z;
        }
        let p = match spec.test_family {
            TestFamily::PairedT => {
                let nf = n as f64;
                let mean = values.iter().sum::<f64>() / nf;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
                t_p_value(mean / (var / nf).sqrt(), nf - 1.0, spec.alternative)?
            }
            TestFamily::Wilcoxon => wilcoxon_signed_rank(&values, spec.alternative),
            TestFamily::Sign => sign_test(&values, spec.alternative),
        };
        ps.push((labels[h].clone(), p));
    }
    let decisions = match spec.correction {
        Correction::None => {
            return Ok(ps.iter().map(|(_, p)| *p <= spec.alpha_f).collect());
        }
        Correction::Bonferroni => bonferroni(&ps, spec.alpha_f),
        _ => holm_stepdown(&ps, spec.alpha_f),
    };
    let mut rejected = vec![false; effects.len()];
    for d in decisions {
        let h: usize = d.pair.1.parse().expect("numeric label");
        rejected[h] = d.reject;
    }
    Ok(rejected)
}
