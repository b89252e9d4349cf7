//! Experiment configuration and the persisted experiment state.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power::{
    AreConstants, Alternative, Correction, DesignResult, DesignSpec, TestFamily, DEFAULT_N_CAP,
};
use crate::runner::RunnerSpec;
use crate::sampler::{comparison_pairs, InstanceSampleReport, SamplingConfig};
use crate::validate::TruthConfig;

pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_cap() -> u64 {
    DEFAULT_N_CAP
}

/// Design section of a configuration file. `num_comparisons` may be left
/// out when the algorithms and sampling section determine it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub alpha_f: f64,
    pub power_target: f64,
    pub mres: f64,
    #[serde(default)]
    pub num_comparisons: Option<u32>,
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerCurveConfig {
    pub n_fixed: u64,
    pub d_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub truth: TruthConfig,
    #[serde(default)]
    pub n_sim: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub design: DesignConfig,
    #[serde(default)]
    pub sampling: Option<SamplingConfig>,
    #[serde(default)]
    pub algorithms: Vec<String>,
    #[serde(default)]
    pub instances: Vec<String>,
    #[serde(default)]
    pub runner: Option<RunnerSpec>,
    #[serde(default)]
    pub global_seed: u64,
    #[serde(default)]
    pub power_curve: Option<PowerCurveConfig>,
    #[serde(default)]
    pub validation: Option<ValidationConfig>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported schema_version {} (expected {SCHEMA_VERSION})",
                path.display(),
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Number of hypotheses implied by the algorithms and comparison set.
    pub fn derived_comparisons(&self) -> Option<u32> {
        if self.algorithms.len() < 2 {
            return None;
        }
        let sampling = self.sampling.as_ref()?;
        let pairs = comparison_pairs(
            &self.algorithms,
            sampling.is_all_vs_one(),
            sampling.reference_id.as_deref(),
        );
        Some(pairs.len() as u32)
    }

    pub fn design_spec(&self) -> Result<DesignSpec> {
        let derived = self.derived_comparisons();
        let k = match (self.design.num_comparisons, derived) {
            (Some(k), Some(d)) if k != d => {
                return Err(Error::Config(format!(
                    "design.num_comparisons = {k} but the algorithms and comparison set give {d}"
                )))
            }
            (Some(k), _) => k,
            (None, Some(d)) => d,
            (None, None) => {
                return Err(Error::Config(
                    "design.num_comparisons is required when it cannot be derived from the algorithms"
                        .into(),
                ))
            }
        };
        let d = &self.design;
        let spec = DesignSpec {
            alpha_f: d.alpha_f,
            power_target: d.power_target,
            mres: d.mres,
            num_comparisons: k,
            alternative: d.alternative,
            correction: d.correction,
            test_family: d.test_family,
            are: d.are,
            n_cap: d.n_cap,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Designed,
    Sampling,
    Sampled,
    Analyzed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub spec: DesignSpec,
    pub result: DesignResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentState {
    pub schema_version: u32,
    pub status: Status,
    pub design: DesignRecord,
    #[serde(default)]
    pub sampling: Option<SamplingConfig>,
    #[serde(default)]
    pub algorithms: Vec<String>,
    #[serde(default)]
    pub instances: Vec<String>,
    #[serde(default)]
    pub runner: Option<RunnerSpec>,
    pub global_seed: u64,
    #[serde(default)]
    pub reports: BTreeMap<String, InstanceSampleReport>,
}

impl ExperimentState {
    /// Moves the status forward; moving backwards is an error.
    pub fn advance(&mut self, to: Status) -> Result<()> {
        if to < self.status {
            return Err(Error::State(format!(
                "cannot move from {:?} back to {:?}",
                self.status, to
            )));
        }
        self.status = to;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::State(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.design.spec.validate()?;
        if let Some(s) = &self.sampling {
            s.validate(&self.algorithms)?;
        }
        if let Some(r) = &self.runner {
            r.validate()?;
        }
        let mut seen = std::collections::BTreeSet::new();
        for i in &self.instances {
            if !seen.insert(i) {
                return Err(Error::State(format!("duplicate instance `{i}`")));
            }
        }
        for (k, rep) in &self.reports {
            if !seen.contains(k) {
                return Err(Error::State(format!("report for unknown instance `{k}`")));
            }
            if &rep.instance_id != k {
                return Err(Error::State(format!(
                    "report keyed `{k}` belongs to `{}`",
                    rep.instance_id
                )));
            }
        }
        if self.status >= Status::Sampled && self.reports.len() != self.instances.len() {
            return Err(Error::State(format!(
                "status {:?} but only {} of {} instances sampled",
                self.status,
                self.reports.len(),
                self.instances.len()
            )));
        }
        Ok(())
    }

    pub fn index_of(&self, instance: &str) -> Option<usize> {
        self.instances.iter().position(|i| i == instance)
    }

    /// Instances without a report, in configuration order.
    pub fn pending(&self) -> Vec<String> {
        self.instances
            .iter()
            .filter(|i| !self.reports.contains_key(*i))
            .cloned()
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::State(format!("cannot read {}: {e}", path.display())))?;
        let state: Self = serde_json::from_str(&text)
            .map_err(|e| Error::State(format!("{}: {e}", path.display())))?;
        state.validate()?;
        Ok(state)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Writes the state to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = sibling(path, ".tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

/// Advisory lock on `<state>.lock`. The operating system releases it when
/// the holder exits, so a killed run never leaves a stale lock behind.
#[derive(Debug)]
pub struct StateLock {
    _file: File,
}

impl StateLock {
    pub fn acquire(state_path: &Path) -> Result<Self> {
        let path = sibling(state_path, ".lock");
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)?;
        match file.try_lock() {
            Ok(()) => {
                file.set_len(0)?;
                writeln!(file, "{}", std::process::id())?;
                Ok(Self { _file: file })
            }
            Err(fs::TryLockError::WouldBlock) => Err(Error::State(format!(
                "{} is locked by another process",
                state_path.display()
            ))),
            Err(fs::TryLockError::Error(e)) => Err(e.into()),
        }
    }
}
