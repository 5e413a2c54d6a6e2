//! Simulated A/B experiment platform.
//!
//! Control and every treatment arm are evaluated on the same request ids with
//! common random numbers (a paired design), which removes most between-arm
//! noise at desk scale. Significance uses Welch's two-sample t with
//! normal-approximation p-values; the reporting threshold is p < 0.05.

use crate::rng::derive_key;
use crate::scenario::Scenario;
use crate::simpipeline::{MetricVector, PipelineError, Request, Simulator, SystemConfig};
use crate::skillhub::{SearchSpace, SkillError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use thiserror::Error;

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Error)]
pub enum AbtestError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("config for arm `{arm}` rejected: {source}")]
    ConfigRejected {
        arm: String,
        #[source]
        source: SkillError,
    },
    #[error("experiment references scenario `{expected}` but platform runs `{actual}`")]
    ScenarioMismatch { expected: String, actual: String },
    #[error("unknown experiment handle `{0}`")]
    UnknownHandle(String),
    #[error("experiment `{0}` is not done; fetch is only valid after completion")]
    NotDone(String),
    #[error("experiment `{handle}` failed: {message}")]
    ExperimentFailed { handle: String, message: String },
    #[error("sample size must be >= 2, got {0}")]
    SampleTooSmall(u64),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Control plus treatment arms over a shared request budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub experiment_id: String,
    pub scenario: String,
    pub control: SystemConfig,
    pub arms: Vec<(String, SystemConfig)>,
    pub num_requests: u64,
    /// Recorded metadata; the simulator maps traffic to `num_requests`.
    pub traffic_fraction: f64,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), AbtestError> {
        if self.num_requests < 2 {
            return Err(AbtestError::InvalidSpec(format!(
                "num_requests must be >= 2, got {}",
                self.num_requests
            )));
        }
        if !(0.0 < self.traffic_fraction && self.traffic_fraction <= 1.0) {
            return Err(AbtestError::InvalidSpec(
                "traffic_fraction must lie in (0, 1]".into(),
            ));
        }
        if self.arms.is_empty() {
            return Err(AbtestError::InvalidSpec("at least one arm required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (arm_id, _) in &self.arms {
            if !seen.insert(arm_id) {
                return Err(AbtestError::InvalidSpec(format!(
                    "duplicate arm id `{arm_id}`"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
    pub n: u64,
}

/// Per-arm aggregation of per-request metric samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub metrics: BTreeMap<String, MetricStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub control_mean: f64,
    pub treatment_mean: f64,
    /// None is the "undefined" sentinel when the control mean is zero.
    pub relative_delta_pct: Option<f64>,
    pub p_value: f64,
    pub significant: bool,
}

/// The agents' reward signal: per-metric lift vs control with significance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, MetricComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcome {
    pub control: ArmResult,
    pub treatment: ArmResult,
    pub report: MetricReport,
}

/// Welch's t statistic with a two-sided normal-approximation p-value.
///
/// Zero-variance degeneracy is defined explicitly so property tests are
/// total: equal means give (0, 1.0), differing means (±∞, 0.0).
pub fn welch_p(
    mean_a: f64,
    std_a: f64,
    n_a: u64,
    mean_b: f64,
    std_b: f64,
    n_b: u64,
) -> Result<(f64, f64), AbtestError> {
    if n_a < 2 {
        return Err(AbtestError::SampleTooSmall(n_a));
    }
    if n_b < 2 {
        return Err(AbtestError::SampleTooSmall(n_b));
    }
    let se2 = std_a * std_a / n_a as f64 + std_b * std_b / n_b as f64;
    if se2 == 0.0 {
        return Ok(if mean_a == mean_b {
            (0.0, 1.0)
        } else {
            ((mean_b - mean_a).signum() * f64::INFINITY, 0.0)
        });
    }
    let t = (mean_b - mean_a) / se2.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    // 2·Φ(−|t|); statrs evaluates the lower tail via erfc, accurate far out.
    let p = (2.0 * normal.cdf(-t.abs())).min(1.0);
    Ok((t, p))
}

/// Percentage lift vs control; `None` when the control mean is zero.
pub fn relative_delta(mean_c: f64, mean_t: f64) -> Option<f64> {
    if mean_c == 0.0 {
        None
    } else {
        Some(100.0 * (mean_t - mean_c) / mean_c)
    }
}

fn aggregate(samples: &[MetricVector], n: u64) -> ArmResult {
    let mut metrics = BTreeMap::new();
    if samples.is_empty() {
        return ArmResult { metrics };
    }
    for name in samples[0].values.keys() {
        let xs: Vec<f64> = samples.iter().map(|s| s.values[name]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64
        } else {
            0.0
        };
        metrics.insert(
            name.clone(),
            MetricStats {
                mean,
                std: var.sqrt(),
                n,
            },
        );
    }
    ArmResult { metrics }
}

fn compare(control: &ArmResult, treatment: &ArmResult) -> Result<MetricReport, AbtestError> {
    let mut metrics = BTreeMap::new();
    for (name, c) in &control.metrics {
        let t = &treatment.metrics[name];
        let (_, p_value) = welch_p(c.mean, c.std, c.n, t.mean, t.std, t.n)?;
        // Paired-zero rule: an arm identical to control must report exactly
        // zero delta and p = 1, not merely statistically zero.
        let (relative_delta_pct, p_value) = if c.mean == t.mean && c.std == t.std {
            (relative_delta(c.mean, t.mean).map(|_| 0.0), 1.0)
        } else {
            (relative_delta(c.mean, t.mean), p_value)
        };
        metrics.insert(
            name.clone(),
            MetricComparison {
                control_mean: c.mean,
                treatment_mean: t.mean,
                relative_delta_pct,
                p_value,
                significant: p_value < SIGNIFICANCE_LEVEL,
            },
        );
    }
    Ok(MetricReport { metrics })
}

/// Evaluates one config over pre-generated requests. Parallel over requests;
/// the fold is index-ordered so worker count never changes the result.
fn arm_samples(
    sim: &Simulator<'_>,
    requests: &[Request],
    config: &SystemConfig,
) -> Result<Vec<MetricVector>, PipelineError> {
    requests
        .par_iter()
        .map(|req| sim.evaluate_on(req, config))
        .collect()
}

/// Runs control vs every arm on request ids 0..num_requests−1 with common
/// random numbers. The experiment seed is mixed into the scenario stream so
/// distinct experiment seeds sample distinct request populations.
pub fn run_simulated_experiment(
    spec: &ExperimentSpec,
    scenario: &Scenario,
    space: &SearchSpace,
) -> Result<BTreeMap<String, ArmOutcome>, AbtestError> {
    spec.validate()?;
    if spec.scenario != scenario.name {
        return Err(AbtestError::ScenarioMismatch {
            expected: spec.scenario.clone(),
            actual: scenario.name.clone(),
        });
    }
    // all configs validate before any evaluation
    space
        .validate_config(&spec.control)
        .map_err(|source| AbtestError::ConfigRejected {
            arm: "control".into(),
            source,
        })?;
    for (arm_id, config) in &spec.arms {
        space
            .validate_config(config)
            .map_err(|source| AbtestError::ConfigRejected {
                arm: arm_id.clone(),
                source,
            })?;
    }

    let sim = Simulator::new(scenario).with_stream_seed(derive_key(&[scenario.seed, spec.seed]));
    let requests: Vec<Request> = (0..spec.num_requests)
        .map(|id| sim.generate_request(id))
        .collect::<Result<_, _>>()?;

    let control_samples = arm_samples(&sim, &requests, &spec.control)?;
    let control = aggregate(&control_samples, spec.num_requests);

    let mut out = BTreeMap::new();
    for (arm_id, config) in &spec.arms {
        let samples = arm_samples(&sim, &requests, config)?;
        let treatment = aggregate(&samples, spec.num_requests);
        let report = compare(&control, &treatment)?;
        out.insert(
            arm_id.clone(),
            ArmOutcome {
                control: control.clone(),
                treatment,
                report,
            },
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentStatus {
    Pending,
    Running,
    Done,
    Failed,
}

/// The contract any experiment backend must satisfy: submit, then poll status,
/// then fetch reports once done. Fetch before done is rejected.
pub trait ExperimentPlatform: Send + Sync {
    fn submit(&self, spec: &ExperimentSpec) -> Result<String, AbtestError>;
    fn status(&self, handle: &str) -> Result<ExperimentStatus, AbtestError>;
    fn fetch(&self, handle: &str) -> Result<BTreeMap<String, MetricReport>, AbtestError>;
}

enum ExperimentState {
    Pending(ExperimentSpec),
    Done(BTreeMap<String, ArmOutcome>),
    Failed(String),
}

struct PlatformState {
    next_handle: u64,
    experiments: HashMap<String, ExperimentState>,
    /// (stream seed, n) -> generated requests; shared across experiments.
    requests: HashMap<(u64, u64), Arc<Vec<Request>>>,
    /// (stream seed, n, canonical config) -> aggregated arm stats.
    arm_cache: HashMap<(u64, u64, String), ArmResult>,
}

/// In-process platform backed by the pipeline simulator. Experiments execute
/// lazily on the first status poll; request pools and per-config aggregates
/// are memoized so repeated evaluation of the same config is free.
pub struct SimulatedPlatform {
    scenario: Scenario,
    space: SearchSpace,
    state: Mutex<PlatformState>,
}

impl SimulatedPlatform {
    pub fn new(scenario: Scenario, space: SearchSpace) -> Self {
        Self {
            scenario,
            space,
            state: Mutex::new(PlatformState {
                next_handle: 0,
                experiments: HashMap::new(),
                requests: HashMap::new(),
                arm_cache: HashMap::new(),
            }),
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Memoized variant of `run_simulated_experiment`.
    pub fn run_spec(
        &self,
        spec: &ExperimentSpec,
    ) -> Result<BTreeMap<String, ArmOutcome>, AbtestError> {
        spec.validate()?;
        if spec.scenario != self.scenario.name {
            return Err(AbtestError::ScenarioMismatch {
                expected: spec.scenario.clone(),
                actual: self.scenario.name.clone(),
            });
        }
        self.space
            .validate_config(&spec.control)
            .map_err(|source| AbtestError::ConfigRejected {
                arm: "control".into(),
                source,
            })?;
        for (arm_id, config) in &spec.arms {
            self.space
                .validate_config(config)
                .map_err(|source| AbtestError::ConfigRejected {
                    arm: arm_id.clone(),
                    source,
                })?;
        }

        let stream_seed = derive_key(&[self.scenario.seed, spec.seed]);
        let requests = {
            let mut state = self.state.lock().unwrap();
            match state.requests.get(&(stream_seed, spec.num_requests)) {
                Some(reqs) => Arc::clone(reqs),
                None => {
                    let sim = Simulator::new(&self.scenario).with_stream_seed(stream_seed);
                    let reqs: Vec<Request> = (0..spec.num_requests)
                        .map(|id| sim.generate_request(id))
                        .collect::<Result<_, _>>()?;
                    let reqs = Arc::new(reqs);
                    state
                        .requests
                        .insert((stream_seed, spec.num_requests), Arc::clone(&reqs));
                    reqs
                }
            }
        };

        let eval = |config: &SystemConfig| -> Result<ArmResult, AbtestError> {
            let key = (stream_seed, spec.num_requests, config.canonical_string());
            if let Some(hit) = self.state.lock().unwrap().arm_cache.get(&key) {
                return Ok(hit.clone());
            }
            let sim = Simulator::new(&self.scenario).with_stream_seed(stream_seed);
            let samples = arm_samples(&sim, &requests, config)?;
            let result = aggregate(&samples, spec.num_requests);
            self.state
                .lock()
                .unwrap()
                .arm_cache
                .insert(key, result.clone());
            Ok(result)
        };

        let control = eval(&spec.control)?;
        let mut out = BTreeMap::new();
        for (arm_id, config) in &spec.arms {
            let treatment = eval(config)?;
            let report = compare(&control, &treatment)?;
            out.insert(
                arm_id.clone(),
                ArmOutcome {
                    control: control.clone(),
                    treatment,
                    report,
                },
            );
        }
        Ok(out)
    }

    /// Full outcome (including arm aggregates) for a completed experiment.
    pub fn outcome(&self, handle: &str) -> Result<BTreeMap<String, ArmOutcome>, AbtestError> {
        let state = self.state.lock().unwrap();
        match state.experiments.get(handle) {
            None => Err(AbtestError::UnknownHandle(handle.to_string())),
            Some(ExperimentState::Done(outcomes)) => Ok(outcomes.clone()),
            Some(ExperimentState::Failed(msg)) => Err(AbtestError::ExperimentFailed {
                handle: handle.to_string(),
                message: msg.clone(),
            }),
            Some(ExperimentState::Pending(_)) => Err(AbtestError::NotDone(handle.to_string())),
        }
    }
}

impl ExperimentPlatform for SimulatedPlatform {
    fn submit(&self, spec: &ExperimentSpec) -> Result<String, AbtestError> {
        spec.validate()?;
        let mut state = self.state.lock().unwrap();
        let handle = format!("exp-{:04}-{}", state.next_handle, spec.experiment_id);
        state.next_handle += 1;
        state
            .experiments
            .insert(handle.clone(), ExperimentState::Pending(spec.clone()));
        Ok(handle)
    }

    /// Pending experiments execute on the first poll and report Done/Failed.
    fn status(&self, handle: &str) -> Result<ExperimentStatus, AbtestError> {
        let pending = {
            let state = self.state.lock().unwrap();
            match state.experiments.get(handle) {
                None => return Err(AbtestError::UnknownHandle(handle.to_string())),
                Some(ExperimentState::Done(_)) => return Ok(ExperimentStatus::Done),
                Some(ExperimentState::Failed(_)) => return Ok(ExperimentStatus::Failed),
                Some(ExperimentState::Pending(spec)) => spec.clone(),
            }
        };
        let result = self.run_spec(&pending);
        let mut state = self.state.lock().unwrap();
        match result {
            Ok(outcomes) => {
                state
                    .experiments
                    .insert(handle.to_string(), ExperimentState::Done(outcomes));
                Ok(ExperimentStatus::Done)
            }
            Err(e) => {
                state
                    .experiments
                    .insert(handle.to_string(), ExperimentState::Failed(e.to_string()));
                Ok(ExperimentStatus::Failed)
            }
        }
    }

    fn fetch(&self, handle: &str) -> Result<BTreeMap<String, MetricReport>, AbtestError> {
        Ok(self
            .outcome(handle)?
            .into_iter()
            .map(|(arm, outcome)| (arm, outcome.report))
            .collect())
    }
}
