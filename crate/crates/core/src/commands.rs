//! Command implementations behind the `xpdesign` binary. Human-readable
//! progress goes to the supplied writer; results go to files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{analyze, paired_differences, summarize, summary_table, Report};
use crate::error::{Error, Result};
use crate::power::{design, mean_holm_power, power_curve, DesignResult, DesignSpec, PowerCurvePoint};
use crate::sampler::{sample_instance, InstanceSampleReport, SeedPlan};
use crate::state::{
    write_atomic, DesignRecord, ExperimentConfig, ExperimentState, StateLock, Status,
    SCHEMA_VERSION,
};
use crate::validate::{validate_design, TruthConfig, ValidationReport};

pub const DEFAULT_N_SIM: u64 = 10_000;

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n0: Option<u64>,
    pub n_max: Option<u64>,
    pub se_star: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.global_seed = s;
        }
        if self.n0.is_some() || self.n_max.is_some() || self.se_star.is_some() {
            let Some(sampling) = cfg.sampling.as_mut() else {
                return Err(Error::Config(
                    "--n0, --n-max and --se-star need a sampling section in the config".into(),
                ));
            };
            if let Some(v) = self.n0 {
                sampling.n0 = v;
            }
            if let Some(v) = self.n_max {
                sampling.n_max = Some(v);
            }
            if let Some(v) = self.se_star {
                sampling.se_star = v;
            }
        }
        Ok(())
    }
}

fn power_note(spec: &DesignSpec, result: &DesignResult, n_supplied: usize) -> Result<Option<String>> {
    let n = n_supplied as u64;
    if n_supplied == 0 || n == result.n_instances {
        return Ok(None);
    }
    let achieved = if n >= 2 {
        mean_holm_power(spec.alpha_f, spec.num_comparisons, n, spec.mres, spec.alternative)?
    } else {
        0.0
    };
    Ok(Some(if n < result.n_instances {
        format!(
            "warning: {n} instances supplied but the design needs {}; mean power at {n} is {achieved:.4}",
            result.n_instances
        )
    } else {
        format!(
            "note: {n} instances supplied, more than the {} required; mean power at {n} is {achieved:.4}",
            result.n_instances
        )
    }))
}

/// Computes the design and writes a fresh state with status `designed`.
pub fn cmd_design(
    config_path: &Path,
    state_path: &Path,
    overrides: Overrides,
    out: &mut dyn Write,
) -> Result<ExperimentState> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    overrides.apply(&mut cfg)?;
    let spec = cfg.design_spec()?;
    if let Some(s) = &cfg.sampling {
        s.validate(&cfg.algorithms)?;
    }
    if let Some(r) = &cfg.runner {
        r.validate()?;
    }
    if state_path.exists() {
        let old = ExperimentState::load(state_path)?;
        if !old.reports.is_empty() {
            return Err(Error::State(format!(
                "{} already holds sampled data; choose another --state path",
                state_path.display()
            )));
        }
    }
    let _lock = StateLock::acquire(state_path)?;
    let result = design(&spec)?;
    writeln!(out, "N* = {}", result.n_instances)?;
    if result.n_paired_t != result.n_instances {
        writeln!(out, "paired-t equivalent N = {}", result.n_paired_t)?;
    }
    writeln!(
        out,
        "alternative = {}, K = {}, correction = {}",
        kebab(&result.alternative),
        spec.num_comparisons,
        serde_json::to_value(spec.correction)?["kind"]
            .as_str()
            .unwrap_or_default()
    )?;
    writeln!(
        out,
        "per-rank power: mean {:.4}, min {:.4}, max {:.4}",
        result.mean_power, result.min_power, result.max_power
    )?;
    if let Some(note) = power_note(&spec, &result, cfg.instances.len())? {
        writeln!(out, "{note}")?;
    }
    let state = ExperimentState {
        schema_version: SCHEMA_VERSION,
        status: Status::Designed,
        design: DesignRecord { spec, result },
        sampling: cfg.sampling,
        algorithms: cfg.algorithms,
        instances: cfg.instances,
        runner: cfg.runner,
        global_seed: cfg.global_seed,
        reports: BTreeMap::new(),
    };
    state.validate()?;
    state.save(state_path)?;
    Ok(state)
}

fn sampling_inputs(
    state: &ExperimentState,
) -> Result<(&crate::sampler::SamplingConfig, &crate::runner::RunnerSpec)> {
    let sampling = state
        .sampling
        .as_ref()
        .ok_or_else(|| Error::Config("state has no sampling configuration".into()))?;
    let runner = state
        .runner
        .as_ref()
        .ok_or_else(|| Error::Config("state has no runner configuration".into()))?;
    if state.instances.is_empty() {
        return Err(Error::Config("state lists no instances".into()));
    }
    Ok((sampling, runner))
}

fn sample_one(state: &ExperimentState, instance: &str) -> Result<InstanceSampleReport> {
    let (sampling, runner) = sampling_inputs(state)?;
    let idx = state
        .index_of(instance)
        .ok_or_else(|| Error::Config(format!("unknown instance `{instance}`")))?;
    sample_instance(
        instance,
        &state.algorithms,
        runner,
        sampling,
        SeedPlan::new(state.global_seed, idx as u64),
    )
    .map_err(|e| match e {
        e @ Error::Run { .. } => e,
        e => Error::Instance {
            instance: instance.to_owned(),
            source: Box::new(e),
        },
    })
}

/// Samples every pending instance, saving the state after each one. A state
/// that is already sampled is left untouched.
pub fn cmd_run(state_path: &Path, out: &mut dyn Write) -> Result<ExperimentState> {
    let _lock = StateLock::acquire(state_path)?;
    let mut state = ExperimentState::load(state_path)?;
    if state.status >= Status::Sampled {
        writeln!(out, "all {} instances already sampled", state.instances.len())?;
        return Ok(state);
    }
    sampling_inputs(&state)?;
    if let Some(note) = power_note(
        &state.design.spec,
        &state.design.result,
        state.instances.len(),
    )? {
        writeln!(out, "{note}")?;
    }
    state.advance(Status::Sampling)?;
    state.save(state_path)?;

    let pending = state.pending();
    let snapshot = state.clone();
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(String, Result<InstanceSampleReport>)>();
    let mut first_error = None;
    std::thread::scope(|scope| -> Result<()> {
        scope.spawn(|| {
            pending.par_iter().for_each_with(tx, |tx, inst| {
                if stop.load(Ordering::Relaxed) {
                    return;
                }
                let _ = tx.send((inst.clone(), sample_one(&snapshot, inst)));
            });
        });
        for (inst, res) in rx {
            match res {
                Ok(rep) => {
                    writeln!(
                        out,
                        "sampled {inst}: {} runs, max se {:.4}{}",
                        rep.total_runs,
                        rep.max_se(),
                        if rep.budget_exhausted { " (budget exhausted)" } else { "" }
                    )?;
                    state.reports.insert(inst, rep);
                    state.save(state_path)?;
                }
                Err(e) => {
                    stop.store(true, Ordering::Relaxed);
                    first_error.get_or_insert(e);
                }
            }
        }
        Ok(())
    })?;
    if let Some(e) = first_error {
        return Err(e);
    }
    state.advance(Status::Sampled)?;
    state.save(state_path)?;
    Ok(state)
}

/// Samples one instance without touching the state file.
pub fn cmd_sample(
    state_path: &Path,
    instance: &str,
    out_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<InstanceSampleReport> {
    let state = ExperimentState::load(state_path)?;
    let rep = sample_one(&state, instance)?;
    let json = serde_json::to_string_pretty(&rep)? + "\n";
    match out_path {
        Some(p) => write_atomic(p, json.as_bytes())?,
        None => out.write_all(json.as_bytes())?,
    }
    Ok(rep)
}

fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

fn kebab<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

pub const HYPOTHESIS_COLUMNS: &[&str] = &[
    "rank",
    "algorithm_i",
    "algorithm_j",
    "estimate",
    "se",
    "df",
    "t_stat",
    "p_value",
    "alpha_r",
    "adjusted_p",
    "reject",
    "ci_low",
    "ci_high",
    "d_hat",
    "test_family",
    "alternative",
    "degenerate",
    "skewness",
    "excess_kurtosis",
    "normality_warning",
];

/// Writes the analysis exports and marks the state analyzed. Sampling data
/// is never modified.
pub fn cmd_analyze(state_path: &Path, out_dir: &Path, out: &mut dyn Write) -> Result<Report> {
    let _lock = StateLock::acquire(state_path)?;
    let mut state = ExperimentState::load(state_path)?;
    let sampling = state
        .sampling
        .clone()
        .ok_or_else(|| Error::Config("state has no sampling configuration".into()))?;
    let table = summary_table(&state.instances, &state.algorithms, &state.reports, sampling.summary)?;
    let reference = sampling.is_all_vs_one().then_some(sampling.reference_id.as_deref()).flatten();
    let vectors = paired_differences(
        &table,
        &state.instances,
        &state.algorithms,
        sampling.comparison,
        reference,
    )?;
    let spec = &state.design.spec;
    let results = analyze(&vectors, spec.alpha_f, spec.alternative, spec.test_family)?;
    let mut report = summarize(
        &state.instances,
        &state.algorithms,
        &state.reports,
        &results,
        spec.alpha_f,
        spec.alternative,
        sampling.comparison,
        spec.test_family,
    );
    if (state.instances.len() as u64) < state.design.result.n_instances {
        report.warnings.insert(
            0,
            format!(
                "{} instances analyzed, fewer than the {} the design requires",
                state.instances.len(),
                state.design.result.n_instances
            ),
        );
    }

    fs::create_dir_all(out_dir)?;
    let alt = kebab(&spec.alternative);
    let family = kebab(&spec.test_family);
    let rows: Vec<Vec<String>> = report
        .hypotheses
        .iter()
        .map(|r| {
            vec![
                r.rank.to_string(),
                r.pair.0.clone(),
                r.pair.1.clone(),
                fmt_f(r.estimate),
                fmt_f(r.se),
                r.df.to_string(),
                fmt_f(r.t_stat),
                fmt_f(r.p_value),
                fmt_f(r.alpha_r),
                fmt_f(r.adjusted_p),
                r.reject.to_string(),
                fmt_opt(r.ci_low),
                fmt_opt(r.ci_high),
                fmt_f(r.d_hat),
                family.clone(),
                alt.clone(),
                r.degenerate.to_string(),
                fmt_f(r.skewness),
                fmt_f(r.excess_kurtosis),
                r.normality_warning.to_string(),
            ]
        })
        .collect();
    write_csv(&out_dir.join("hypotheses.csv"), HYPOTHESIS_COLUMNS, &rows)?;

    let rows: Vec<Vec<String>> = report
        .instance_se
        .iter()
        .map(|r| {
            vec![
                r.instance.clone(),
                r.algorithm_i.clone(),
                r.algorithm_j.clone(),
                fmt_f(r.estimate),
                fmt_f(r.se),
                r.total_runs.to_string(),
                r.budget_exhausted.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("instance_se.csv"),
        &["instance", "algorithm_i", "algorithm_j", "estimate", "se", "total_runs", "budget_exhausted"],
        &rows,
    )?;

    let rows: Vec<Vec<String>> = report
        .run_counts
        .iter()
        .map(|r| vec![r.instance.clone(), r.algorithm.clone(), r.runs.to_string()])
        .collect();
    write_csv(&out_dir.join("run_counts.csv"), &["instance", "algorithm", "runs"], &rows)?;

    let rows: Vec<Vec<String>> = report
        .hypotheses
        .iter()
        .map(|r| {
            vec![
                r.rank.to_string(),
                format!("{} vs {}", r.pair.0, r.pair.1),
                fmt_f(r.estimate),
                fmt_opt(r.ci_low),
                fmt_opt(r.ci_high),
                fmt_f(r.alpha_r),
                r.reject.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("ci_chart.csv"),
        &["rank", "label", "estimate", "ci_low", "ci_high", "alpha_r", "reject"],
        &rows,
    )?;

    let json = serde_json::to_string_pretty(&report)? + "\n";
    write_atomic(&out_dir.join("summary.json"), json.as_bytes())?;

    writeln!(
        out,
        "{} of {} hypotheses rejected at alpha_f = {}",
        report.rejections,
        report.hypotheses.len(),
        spec.alpha_f
    )?;
    for w in &report.warnings {
        writeln!(out, "warning: {w}")?;
    }
    if state.status != Status::Analyzed {
        state.advance(Status::Analyzed)?;
        state.save(state_path)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub effect_size: f64,
    pub mean_power: f64,
    /// `grid` for computed points, `mres` for the value interpolated at d*.
    pub kind: &'static str,
}

/// Mean Holm power over the grid plus a row at d* interpolated linearly
/// between its grid neighbours (or copied from the nearest point outside
/// the grid range).
pub fn curve_with_mres(points: &[PowerCurvePoint], mres: f64) -> Vec<CurveRow> {
    let mut rows: Vec<CurveRow> = points
        .iter()
        .map(|p| CurveRow {
            effect_size: p.effect_size,
            mean_power: p.mean_power,
            kind: "grid",
        })
        .collect();
    rows.sort_by(|a, b| a.effect_size.total_cmp(&b.effect_size));
    if rows.is_empty() {
        return rows;
    }
    let pos = rows.partition_point(|r| r.effect_size < mres);
    let power = if pos == 0 {
        rows[0].mean_power
    } else if pos == rows.len() {
        rows[pos - 1].mean_power
    } else {
        let (a, b) = (&rows[pos - 1], &rows[pos]);
        let w = (mres - a.effect_size) / (b.effect_size - a.effect_size);
        a.mean_power + w * (b.mean_power - a.mean_power)
    };
    rows.insert(
        pos,
        CurveRow {
            effect_size: mres,
            mean_power: power,
            kind: "mres",
        },
    );
    rows
}

pub fn default_grid() -> Vec<f64> {
    (0..=40).map(|k| k as f64 * 0.025).collect()
}

pub fn cmd_powercurve(
    config_path: &Path,
    n_fixed: Option<u64>,
    grid: Option<Vec<f64>>,
    out_path: &Path,
    out: &mut dyn Write,
) -> Result<Vec<CurveRow>> {
    let cfg = ExperimentConfig::load(config_path)?;
    let spec = cfg.design_spec()?;
    let n = n_fixed
        .or(cfg.power_curve.as_ref().map(|p| p.n_fixed))
        .ok_or_else(|| Error::Config("a fixed N is required (--n or power_curve.n_fixed)".into()))?;
    let grid = grid
        .or_else(|| cfg.power_curve.as_ref().map(|p| p.d_grid.clone()))
        .unwrap_or_else(default_grid);
    let points = power_curve(n, &spec, &grid)?;
    let rows = curve_with_mres(&points, spec.mres);
    let alt = kebab(&spec.alternative);
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                fmt_f(r.effect_size),
                fmt_f(r.mean_power),
                r.kind.to_string(),
                n.to_string(),
                spec.num_comparisons.to_string(),
                alt.clone(),
            ]
        })
        .collect();
    write_csv(
        out_path,
        &["effect_size", "mean_power", "kind", "n", "num_comparisons", "alternative"],
        &csv_rows,
    )?;
    if let Some(m) = rows.iter().find(|r| r.kind == "mres") {
        writeln!(
            out,
            "mean power at d* = {} with N = {n}, K = {}: {:.4}",
            m.effect_size, spec.num_comparisons, m.mean_power
        )?;
    }
    Ok(rows)
}

pub fn cmd_validate(
    config_path: &Path,
    truth_path: Option<&Path>,
    n_sim: Option<u64>,
    seed: Option<u64>,
    out_path: &Path,
    out: &mut dyn Write,
) -> Result<ValidationReport> {
    let cfg = ExperimentConfig::load(config_path)?;
    let spec = cfg.design_spec()?;
    let truth = match truth_path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<TruthConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => cfg
            .validation
            .as_ref()
            .map(|v| v.truth.clone())
            .ok_or_else(|| Error::Config("a truth configuration is required (--truth or validation.truth)".into()))?,
    };
    let n_sim = n_sim
        .or(cfg.validation.as_ref().and_then(|v| v.n_sim))
        .unwrap_or(DEFAULT_N_SIM);
    let seed = seed.unwrap_or(cfg.global_seed);
    let report = validate_design(&spec, &truth, n_sim, seed)?;
    write_atomic(out_path, (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    writeln!(
        out,
        "N = {}, n_sim = {n_sim}: FWER {:.4} (se {:.4})",
        report.n_instances, report.fwer.rate, report.fwer.se
    )?;
    if let Some(p) = report.mean_power {
        writeln!(out, "mean power over non-null hypotheses: {p:.4}")?;
    }
    Ok(report)
}
