//! Producing performance observations: external solver processes driven
//! through a one-line result protocol, or seeded synthetic distributions.

use std::collections::BTreeMap;
use std::io::Read;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT_SECS: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
    Timeout,
}

/// Outcome of one run of one algorithm on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm_id: String,
    pub instance_id: String,
    pub seed: u64,
    pub value: Option<f64>,
    pub wall_time: f64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<String>,
}

impl RunRecord {
    pub fn ok(algorithm_id: &str, instance_id: &str, seed: u64, value: f64) -> Self {
        Self {
            algorithm_id: algorithm_id.to_owned(),
            instance_id: instance_id.to_owned(),
            seed,
            value: Some(value),
            wall_time: 0.0,
            status: RunStatus::Ok,
            diagnostics: None,
        }
    }

    pub fn failed(
        algorithm_id: &str,
        instance_id: &str,
        seed: u64,
        status: RunStatus,
        diagnostics: impl Into<String>,
    ) -> Self {
        Self {
            algorithm_id: algorithm_id.to_owned(),
            instance_id: instance_id.to_owned(),
            seed,
            value: None,
            wall_time: 0.0,
            status,
            diagnostics: Some(diagnostics.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RunnerSpec {
    External(ExternalSpec),
    Synthetic(SyntheticSpec),
}

/// A solver invoked as `command args...`, where `{algorithm}`, `{instance}`
/// and `{seed}` are substituted in the command and every argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSpec {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticDistribution {
    /// `Normal(location, scale)`.
    Normal,
    /// `exp(Normal(location, scale))`.
    Lognormal,
    /// `Uniform[location, location + scale)`, with `location > 0`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub location: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOverride {
    pub algorithm: String,
    pub instance: String,
    pub location: f64,
    pub scale: f64,
}

/// Synthetic performance model. The location of cell (algorithm, instance)
/// is the algorithm's location plus the instance offset plus an optional
/// seeded algorithm-by-instance interaction; explicit cell overrides win.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub distribution: SyntheticDistribution,
    #[serde(default)]
    pub default: Option<CellParams>,
    #[serde(default)]
    pub algorithms: BTreeMap<String, CellParams>,
    #[serde(default)]
    pub instance_offsets: BTreeMap<String, f64>,
    #[serde(default)]
    pub interaction_sd: f64,
    #[serde(default)]
    pub cells: Vec<CellOverride>,
    /// Seeds the interaction draws; runs are seeded separately.
    #[serde(default)]
    pub model_seed: u64,
}

impl SyntheticSpec {
    pub fn new(distribution: SyntheticDistribution) -> Self {
        Self {
            distribution,
            default: None,
            algorithms: BTreeMap::new(),
            instance_offsets: BTreeMap::new(),
            interaction_sd: 0.0,
            cells: Vec::new(),
            model_seed: 0,
        }
    }

    pub fn with_algorithm(mut self, id: &str, location: f64, scale: f64) -> Self {
        self.algorithms
            .insert(id.to_owned(), CellParams { location, scale });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let check = |p: &CellParams, what: &str| -> Result<()> {
            if !p.location.is_finite() || !p.scale.is_finite() || p.scale < 0.0 {
                return Err(Error::Config(format!(
                    "{what}: location must be finite and scale nonnegative"
                )));
            }
            if self.distribution != SyntheticDistribution::Normal && p.scale <= 0.0 {
                return Err(Error::Config(format!(
                    "{what}: scale must be positive for {:?}",
                    self.distribution
                )));
            }
            if self.distribution == SyntheticDistribution::Uniform && p.location <= 0.0 {
                return Err(Error::Config(format!(
                    "{what}: uniform location must be positive"
                )));
            }
            Ok(())
        };
        if let Some(d) = &self.default {
            check(d, "default")?;
        }
        for (id, p) in &self.algorithms {
            check(p, id)?;
        }
        for c in &self.cells {
            check(
                &CellParams {
                    location: c.location,
                    scale: c.scale,
                },
                &format!("cell ({}, {})", c.algorithm, c.instance),
            )?;
        }
        if !(self.interaction_sd >= 0.0 && self.interaction_sd.is_finite()) {
            return Err(Error::Config("interaction_sd must be nonnegative".into()));
        }
        if self.distribution == SyntheticDistribution::Uniform
            && (self.interaction_sd > 0.0 || self.instance_offsets.values().any(|&o| o < 0.0))
        {
            return Err(Error::Config(
                "uniform synthetic runners accept only nonnegative instance offsets and no interaction"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Effective distribution parameters of one cell.
    pub fn cell_params(&self, algorithm: &str, instance: &str) -> Result<CellParams> {
        if let Some(c) = self
            .cells
            .iter()
            .find(|c| c.algorithm == algorithm && c.instance == instance)
        {
            return Ok(CellParams {
                location: c.location,
                scale: c.scale,
            });
        }
        let base = self
            .algorithms
            .get(algorithm)
            .or(self.default.as_ref())
            .ok_or_else(|| {
                Error::Config(format!("no synthetic parameters for algorithm `{algorithm}`"))
            })?;
        let mut location = base.location + self.instance_offsets.get(instance).copied().unwrap_or(0.0);
        if self.interaction_sd > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                self.model_seed,
                &[stable_hash(algorithm), stable_hash(instance)],
            ));
            let z: f64 = StandardNormal.sample(&mut rng);
            location += self.interaction_sd * z;
        }
        Ok(CellParams {
            location,
            scale: base.scale,
        })
    }

    fn draw(&self, algorithm: &str, instance: &str, seed: u64) -> Result<f64> {
        let p = self.cell_params(algorithm, instance)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
            seed,
            &[stable_hash(algorithm), stable_hash(instance)],
        ));
        let bad = |e: String| Error::Config(format!("synthetic parameters: {e}"));
        Ok(match self.distribution {
            SyntheticDistribution::Normal => {
                if p.scale == 0.0 {
                    p.location
                } else {
                    Normal::new(p.location, p.scale)
                        .map_err(|e| bad(e.to_string()))?
                        .sample(&mut rng)
                }
            }
            SyntheticDistribution::Lognormal => {
                let v = LogNormal::new(p.location, p.scale)
                    .map_err(|e| bad(e.to_string()))?
                    .sample(&mut rng);
                v.max(f64::MIN_POSITIVE)
            }
            SyntheticDistribution::Uniform => {
                // [location, location + scale) with location > 0
                p.location + p.scale * rng.random::<f64>()
            }
        })
    }
}

impl RunnerSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            RunnerSpec::External(e) => {
                if e.command.trim().is_empty() {
                    return Err(Error::Config("external runner command is empty".into()));
                }
                if !(e.timeout_secs > 0.0 && e.timeout_secs.is_finite()) {
                    return Err(Error::Config("timeout_secs must be positive".into()));
                }
                Ok(())
            }
            RunnerSpec::Synthetic(s) => s.validate(),
        }
    }
}

/// One run of one algorithm on one instance with the given seed. Identical
/// inputs give identical records, apart from `wall_time` for external runs.
pub fn run_once(spec: &RunnerSpec, algorithm_id: &str, instance_id: &str, seed: u64) -> RunRecord {
    match spec {
        RunnerSpec::Synthetic(s) => match s.draw(algorithm_id, instance_id, seed) {
            Ok(v) => RunRecord::ok(algorithm_id, instance_id, seed, v),
            Err(e) => RunRecord::failed(
                algorithm_id,
                instance_id,
                seed,
                RunStatus::Failed,
                e.to_string(),
            ),
        },
        RunnerSpec::External(e) => run_external(e, algorithm_id, instance_id, seed),
    }
}

fn substitute(template: &str, algorithm: &str, instance: &str, seed: u64) -> String {
    template
        .replace("{algorithm}", algorithm)
        .replace("{instance}", instance)
        .replace("{seed}", &seed.to_string())
}

fn run_external(spec: &ExternalSpec, algorithm: &str, instance: &str, seed: u64) -> RunRecord {
    let start = Instant::now();
    let fail = |status, msg: String| {
        let mut r = RunRecord::failed(algorithm, instance, seed, status, msg);
        r.wall_time = start.elapsed().as_secs_f64();
        r
    };
    let program = substitute(&spec.command, algorithm, instance, seed);
    let args: Vec<String> = spec
        .args
        .iter()
        .map(|a| substitute(a, algorithm, instance, seed))
        .collect();
    let mut child = match Command::new(&program)
        .args(&args)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
    {
        Ok(c) => c,
        Err(e) => return fail(RunStatus::Failed, format!("spawn `{program}`: {e}")),
    };

    // drain both pipes off-thread so a chatty child cannot block on a full pipe
    let mut stdout = child.stdout.take().expect("stdout piped");
    let mut stderr = child.stderr.take().expect("stderr piped");
    let out_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    let err_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });

    let timeout = Duration::from_secs_f64(spec.timeout_secs);
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) => {
                if start.elapsed() >= timeout {
                    let _ = child.kill();
                    let _ = child.wait();
                    return fail(
                        RunStatus::Timeout,
                        format!("timed out after {} s", spec.timeout_secs),
                    );
                }
                std::thread::sleep(Duration::from_millis(2));
            }
            Err(e) => return fail(RunStatus::Failed, format!("wait: {e}")),
        }
    };
    let out = out_reader.join().unwrap_or_default();
    let err = err_reader.join().unwrap_or_default();
    if !status.success() {
        return fail(
            RunStatus::Failed,
            format!("exit status {status}; stderr: {}", tail(&err)),
        );
    }
    match parse_result_line(&out) {
        Some((value, diagnostics)) => {
            let mut r = RunRecord::ok(algorithm, instance, seed, value);
            r.diagnostics = diagnostics;
            r.wall_time = start.elapsed().as_secs_f64();
            r
        }
        None => fail(
            RunStatus::Failed,
            format!("no result line with a numeric `value`; stdout: {}", tail(&out)),
        ),
    }
}

fn tail(s: &str) -> String {
    let t = s.trim();
    let start = t.len().saturating_sub(400);
    let start = (start..=t.len()).find(|&i| t.is_char_boundary(i)).unwrap_or(t.len());
    t[start..].to_owned()
}

/// Finds the result line: the last stdout line that is a JSON object with a
/// finite numeric `value`. Other lines are solver logging.
pub fn parse_result_line(stdout: &str) -> Option<(f64, Option<String>)> {
    stdout.lines().rev().find_map(|line| {
        let line = line.trim();
        if !line.starts_with('{') {
            return None;
        }
        let obj: serde_json::Value = serde_json::from_str(line).ok()?;
        let value = obj.get("value")?.as_f64().filter(|v| v.is_finite())?;
        let diagnostics = obj.get("diagnostics").map(|d| match d {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        });
        Some((value, diagnostics))
    })
}

/// Source of observations for the sampler.
pub trait Runner: Sync {
    fn run(&self, algorithm_id: &str, instance_id: &str, seed: u64) -> RunRecord;
}

impl Runner for RunnerSpec {
    fn run(&self, algorithm_id: &str, instance_id: &str, seed: u64) -> RunRecord {
        run_once(self, algorithm_id, instance_id, seed)
    }
}

impl<F> Runner for F
where
    F: Fn(&str, &str, u64) -> RunRecord + Sync,
{
    fn run(&self, algorithm_id: &str, instance_id: &str, seed: u64) -> RunRecord {
        self(algorithm_id, instance_id, seed)
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based seed derivation: each coordinate is folded in through a
/// SplitMix64 finalizer so distinct coordinate tuples give independent streams.
pub fn mix_seed(base: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix(base), |acc, &c| splitmix(acc ^ splitmix(c.wrapping_add(GOLDEN))))
}

/// Seed of run `run_index` of algorithm `algorithm_index` on instance
/// `instance_index`, `attempt` counting retries.
pub fn derive_seed(
    global_seed: u64,
    algorithm_index: u64,
    instance_index: u64,
    run_index: u64,
    attempt: u64,
) -> u64 {
    mix_seed(
        global_seed,
        &[algorithm_index, instance_index, run_index, attempt],
    )
}

/// FNV-1a, stable across platforms and releases.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}
