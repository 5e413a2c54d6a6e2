//! Scenario files: the fixed, hidden world a pipeline configuration is tuned
//! against. A scenario pins the random seed, candidate-pool shape, scoring-head
//! names, user-model dimensions, and cost constants, so every evaluation is a
//! pure function of (scenario, config, request id).

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("io error reading scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Scenario definition; serializes to JSON with a fixed field order so a
/// load/save cycle is byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Size of the initial candidate pool per request.
    pub pool_size: usize,
    /// Number of topic categories; item topics are uniform over [0, topics).
    pub topics: u32,
    /// Head names scored by the pre-ranking model (noisy, cheap heads).
    pub pre_heads: Vec<String>,
    /// Head names scored by the ranking model. Each rank head is a convex
    /// mixture of a pre head and the true latent appeal, with mixing weight
    /// `rank_fidelity`, so ranking genuinely refines pre-ranking.
    pub rank_heads: Vec<String>,
    /// Dimension of the hidden user-preference and item-appeal vectors.
    pub latent_dim: usize,
    /// In [0, 1]; 1.0 means rank heads equal the true appeal.
    pub rank_fidelity: f64,
    /// Cost per candidate entering the ranking stage (multiplies K1).
    pub cost_per_rank_item: f64,
    /// Cost per candidate entering the re-ranking stage (multiplies K2).
    pub cost_per_re_item: f64,
    /// Hard budget: configurations with cost above this are infeasible.
    pub max_cost: f64,
    /// Metric names the simulator reports.
    pub metrics: Vec<String>,
}

/// Metric names the built-in simulator knows how to compute.
pub const SUPPORTED_METRICS: [&str; 3] = ["engagement1", "engagement2", "diversity"];

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.is_empty() {
            return Err(invalid("name", "must be nonempty"));
        }
        if self.pool_size == 0 {
            return Err(invalid("pool_size", "must be >= 1"));
        }
        if self.topics == 0 {
            return Err(invalid("topics", "must be >= 1"));
        }
        if self.pre_heads.is_empty() {
            return Err(invalid("pre_heads", "must declare at least one head"));
        }
        if self.rank_heads.is_empty() {
            return Err(invalid("rank_heads", "must declare at least one head"));
        }
        for h in &self.pre_heads {
            if self.rank_heads.contains(h) {
                return Err(invalid(
                    "rank_heads",
                    format!("head `{h}` appears in both stages; head sets must be disjoint"),
                ));
            }
        }
        if self.latent_dim == 0 {
            return Err(invalid("latent_dim", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.rank_fidelity) {
            return Err(invalid("rank_fidelity", "must lie in [0, 1]"));
        }
        if self.cost_per_rank_item < 0.0 || self.cost_per_re_item < 0.0 {
            return Err(invalid("cost_per_rank_item", "cost constants must be >= 0"));
        }
        if self.metrics.is_empty() {
            return Err(invalid("metrics", "must declare at least one metric"));
        }
        for m in &self.metrics {
            if !SUPPORTED_METRICS.contains(&m.as_str()) {
                return Err(invalid(
                    "metrics",
                    format!("unsupported metric `{m}`; supported: {SUPPORTED_METRICS:?}"),
                ));
            }
        }
        Ok(())
    }

    /// Canonical JSON form (pretty, fixed field order, trailing newline).
    pub fn canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        let scenario: Scenario = serde_json::from_str(&text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        self.validate()?;
        crate::memory::atomic_write(path, self.canonical_json().as_bytes())
            .map_err(ScenarioError::Io)
    }
}
