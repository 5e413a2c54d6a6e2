//! The five agents as pure decision procedures.
//!
//! Actor proposes configurations, Critic filters them through a deterministic
//! rule pipeline, Online schedules and collects experiments, Insight learns
//! parameter sensitivities from completed history, and Skill evolves the
//! versioned task definition. Only the online agent mutates memory; everything
//! else maps immutable snapshots to values.

use crate::abtest::{
    AbtestError, ExperimentPlatform, ExperimentSpec, ExperimentStatus, MetricReport,
};
use crate::llmclient::{self, EndpointConfig, LlmError};
use crate::memory::{EliteArchive, MemoryError, MemoryStore, TaskRecord, TaskStatus};
use crate::objective::utility;
use crate::rng::{hash_str, StreamRng};
use crate::simpipeline::SystemConfig;
use crate::skillhub::{
    EliteForPrompt, KnowledgeEntry, ParamKind, Provenance, Rule, SearchSpace, Skill, SkillError,
};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Relative L∞ tolerance below which two configs count as the same point.
pub const DUPLICATE_TOLERANCE: f64 = 1e-6;
/// Relative L∞ radius around known guardrail-violating configs.
pub const FAILURE_PROXIMITY_RADIUS: f64 = 0.05;
/// Probability the heuristic actor samples uniformly instead of perturbing.
pub const EXPLORE_PROB: f64 = 0.25;
/// Gaussian perturbation scale as a fraction of each parameter's range.
pub const PERTURB_SIGMA_FRAC: f64 = 0.1;
/// Perturbation probability for non-sensitive parameters.
pub const NON_SENSITIVE_PERTURB_PROB: f64 = 0.3;
/// Minimum |Pearson correlation| for a learned pattern.
pub const PATTERN_MIN_CORRELATION: f64 = 0.5;
/// Minimum sample count for a learned pattern.
pub const PATTERN_MIN_SAMPLES: u64 = 5;
/// Completed-task count required before bounds tightening activates.
pub const EVOLVE_MIN_COMPLETED: usize = 5;
/// Margin added around the elite hull when tightening, as a fraction of the
/// current range.
pub const EVOLVE_HULL_MARGIN: f64 = 0.2;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Abtest(#[from] AbtestError),
    #[error("llm backend failed ({source}); raw response excerpt: {excerpt:?}")]
    LlmBackend {
        #[source]
        source: LlmError,
        excerpt: String,
    },
    #[error("no approved proposals to schedule")]
    EmptyApproved,
    #[error("arm `{0}` has no matching task record")]
    UnknownArm(String),
    #[error("insight scope does not match skill `{0}`")]
    ScopeMismatch(String),
    #[error("bounds tightening would exclude every elite for `{0}`; memory and skill are inconsistent")]
    EvolutionInconsistent(String),
    #[error("cannot compose: {0}")]
    Compose(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Heuristic,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedCandidate {
    pub config: SystemConfig,
    pub explanation: String,
    pub origin: Origin,
}

/// Round-robin elite base plus archive utility, as the actor consumes it.
#[derive(Debug, Clone)]
pub struct EliteSnapshot {
    pub record: TaskRecord,
    pub utility: f64,
}

#[derive(Debug, Clone)]
pub enum ProposerBackend {
    Heuristic,
    Llm(EndpointConfig),
}

fn heuristic_candidate(
    skill: &Skill,
    elites: &[EliteSnapshot],
    slot: usize,
    seed: u64,
) -> ProposedCandidate {
    let space = &skill.requirement.search_space;
    let mut rng = StreamRng::from_parts(&[seed, slot as u64, hash_str("actor")]);
    if rng.next_f64() < EXPLORE_PROB {
        let mut params = BTreeMap::new();
        for (name, spec) in &space.params {
            let mut prng = StreamRng::from_parts(&[seed, slot as u64, hash_str(name), hash_str("uniform")]);
            params.insert(name.clone(), spec.sample(&mut prng));
        }
        return ProposedCandidate {
            config: SystemConfig { params },
            explanation: "uniform resample of all parameters within bounds".into(),
            origin: Origin::Heuristic,
        };
    }
    let (base, base_name) = if elites.is_empty() {
        (skill.initial_config.clone(), "initial config".to_string())
    } else {
        let elite = &elites[slot % elites.len()];
        let config = elite
            .record
            .parsed_config()
            .unwrap_or_else(|_| skill.initial_config.clone());
        (config, format!("elite {}", elite.record.id))
    };
    let mut params = BTreeMap::new();
    let mut moves: Vec<String> = Vec::new();
    for (name, spec) in &space.params {
        let mut prng = StreamRng::from_parts(&[seed, slot as u64, hash_str(name), hash_str("perturb")]);
        let current = base.params.get(name).copied().unwrap_or(spec.lower);
        let perturb = spec.sensitive || prng.next_f64() < NON_SENSITIVE_PERTURB_PROB;
        let value = if perturb {
            let mut step = prng.next_gaussian() * PERTURB_SIGMA_FRAC * spec.range();
            if spec.kind == ParamKind::Integer && step.abs() < 0.5 {
                // integer parameters need at least a unit step to move at all
                step = step.signum() * 1.0;
            }
            spec.clip(current + step)
        } else {
            spec.clip(current)
        };
        if perturb && value != current {
            let dir = if value > current { "up" } else { "down" };
            moves.push(format!("{name} {dir} to {value:.4}"));
        }
        params.insert(name.clone(), value);
    }
    let explanation = if moves.is_empty() {
        format!("resample around {base_name}; all perturbations clipped back")
    } else {
        format!("perturb {base_name}: {}", moves.join(", "))
    };
    ProposedCandidate {
        config: SystemConfig { params },
        explanation,
        origin: Origin::Heuristic,
    }
}

/// Proposes `batch` candidates. The heuristic backend is deterministic in
/// `seed`: each slot either resamples uniformly (probability 0.25) or perturbs
/// a round-robin elite base (initial config when the archive is empty),
/// always moving sensitive parameters and non-sensitive ones with probability
/// 0.3. The LLM backend renders the actor prompt, parses the returned JSON
/// array, and pads short batches heuristically.
pub fn actor_propose(
    skill: &Skill,
    elites: &[EliteSnapshot],
    batch: usize,
    backend: &ProposerBackend,
    seed: u64,
) -> Result<Vec<ProposedCandidate>, AgentError> {
    assert!(batch >= 1);
    match backend {
        ProposerBackend::Heuristic => Ok((0..batch)
            .map(|slot| heuristic_candidate(skill, elites, slot, seed))
            .collect()),
        ProposerBackend::Llm(endpoint) => {
            let prompt_elites: Vec<EliteForPrompt> = elites
                .iter()
                .map(|e| EliteForPrompt {
                    record: &e.record,
                    utility: e.utility,
                })
                .collect();
            let prompt =
                crate::skillhub::render_actor_prompt(skill, &prompt_elites, batch, &[]);
            let request = llmclient::ChatRequest {
                model: endpoint.model.clone(),
                messages: vec![llmclient::ChatMessage {
                    role: llmclient::Role::User,
                    content: prompt,
                }],
                temperature: 0.7,
                max_tokens: 4096,
            };
            let response = llmclient::complete(&request, endpoint).map_err(|source| {
                AgentError::LlmBackend {
                    source,
                    excerpt: String::new(),
                }
            })?;
            let excerpt: String = response.text.chars().take(200).collect();
            let (valid, _rejected) =
                llmclient::extract_json_array(&response.text)
                    .map_err(|source| AgentError::LlmBackend { source, excerpt })?;
            let mut out: Vec<ProposedCandidate> = valid
                .into_iter()
                .take(batch)
                .map(|c| ProposedCandidate {
                    config: SystemConfig { params: c.config },
                    explanation: c.explanation,
                    origin: Origin::Llm,
                })
                .collect();
            let mut slot = 0;
            while out.len() < batch {
                out.push(heuristic_candidate(skill, elites, slot, seed));
                slot += 1;
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonCode {
    Schema,
    Bounds,
    Rule,
    Duplicate,
    FailureProximity,
    Surplus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict")]
pub enum Verdict {
    Approved,
    Rejected { reason: ReasonCode, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticVerdict {
    /// One verdict per proposal, in input order.
    pub verdicts: Vec<Verdict>,
    /// Approved proposal indices ranked by predicted promise.
    pub approved: Vec<usize>,
    pub comments: String,
}

fn schema_check(space: &SearchSpace, config: &SystemConfig) -> Result<(), (ReasonCode, String)> {
    for name in config.params.keys() {
        if !space.params.contains_key(name) {
            return Err((ReasonCode::Schema, format!("unknown parameter `{name}`")));
        }
    }
    for name in space.params.keys() {
        if !config.params.contains_key(name) {
            return Err((ReasonCode::Schema, format!("missing parameter `{name}`")));
        }
    }
    for (name, spec) in &space.params {
        let v = config.params[name];
        if !v.is_finite() || v < spec.lower || v > spec.upper {
            return Err((
                ReasonCode::Bounds,
                format!("{name} = {v} outside [{}, {}]", spec.lower, spec.upper),
            ));
        }
        if spec.kind == ParamKind::Integer && (v - v.round()).abs() > 1e-9 {
            return Err((ReasonCode::Bounds, format!("{name} = {v} must be integral")));
        }
    }
    Ok(())
}

/// True when a completed record's report violates any guardrail.
fn violated_guardrail(report: &MetricReport, skill: &Skill) -> bool {
    let mut values = BTreeMap::new();
    for name in skill.north_star.metric_names() {
        match report.metrics.get(&name) {
            Some(cmp) => values.insert(name, cmp.treatment_mean),
            None => return false,
        };
    }
    utility(&values, &skill.north_star, None).map_or(false, |u| !u.feasible)
}

/// Deterministic five-check pipeline: schema, bounds, knowledge rules,
/// duplicate-of-history (including earlier proposals in the same batch), and
/// proximity to known guardrail violations. Survivors rank by relative L∞
/// distance to the best elite (closest first; input order when the archive is
/// empty) and truncate to `keep`; excess proposals reject as surplus.
pub fn critic_review(
    proposals: &[ProposedCandidate],
    skill: &Skill,
    history: &[TaskRecord],
    elites: &EliteArchive,
    keep: usize,
) -> CriticVerdict {
    assert!(keep >= 1);
    let space = &skill.requirement.search_space;
    let historical: Vec<SystemConfig> = history
        .iter()
        .filter_map(|r| r.parsed_config().ok())
        .collect();
    let failures: Vec<SystemConfig> = history
        .iter()
        .filter(|r| r.status == TaskStatus::Completed)
        .filter(|r| r.results.as_ref().is_some_and(|rep| violated_guardrail(rep, skill)))
        .filter_map(|r| r.parsed_config().ok())
        .collect();

    let mut verdicts: Vec<Option<Verdict>> = vec![None; proposals.len()];
    let mut accepted_configs: Vec<(usize, SystemConfig)> = Vec::new();
    for (i, proposal) in proposals.iter().enumerate() {
        let config = &proposal.config;
        if let Err((reason, message)) = schema_check(space, config) {
            verdicts[i] = Some(Verdict::Rejected { reason, message });
            continue;
        }
        if let Some(rule) = skill
            .domain_knowledge
            .iter()
            .filter_map(|k| k.rule.as_ref())
            .find(|r| r.violated_by(config))
        {
            verdicts[i] = Some(Verdict::Rejected {
                reason: ReasonCode::Rule,
                message: format!(
                    "violates {} rule on `{}`",
                    rule.relation_name(),
                    rule.parameter()
                ),
            });
            continue;
        }
        let near_history = historical
            .iter()
            .any(|h| space.relative_linf(config, h) <= DUPLICATE_TOLERANCE);
        let near_batch = accepted_configs
            .iter()
            .any(|(_, c)| space.relative_linf(config, c) <= DUPLICATE_TOLERANCE);
        if near_history || near_batch {
            verdicts[i] = Some(Verdict::Rejected {
                reason: ReasonCode::Duplicate,
                message: "within duplicate tolerance of an existing config".into(),
            });
            continue;
        }
        if let Some(bad) = failures
            .iter()
            .find(|f| space.relative_linf(config, f) <= FAILURE_PROXIMITY_RADIUS)
        {
            verdicts[i] = Some(Verdict::Rejected {
                reason: ReasonCode::FailureProximity,
                message: format!(
                    "within {FAILURE_PROXIMITY_RADIUS} of guardrail-violating config {}",
                    bad.canonical_string()
                ),
            });
            continue;
        }
        accepted_configs.push((i, config.clone()));
    }

    // promise = distance to the proven best; ties keep input order
    let best_elite = elites
        .entries
        .first()
        .and_then(|e| SystemConfig::from_canonical(&e.config).ok());
    let mut ranked: Vec<usize> = accepted_configs.iter().map(|(i, _)| *i).collect();
    if let Some(best) = &best_elite {
        ranked.sort_by(|&a, &b| {
            let da = space.relative_linf(&proposals[a].config, best);
            let db = space.relative_linf(&proposals[b].config, best);
            da.total_cmp(&db).then(a.cmp(&b))
        });
    }
    let approved: Vec<usize> = ranked.iter().copied().take(keep).collect();
    for &i in ranked.iter().skip(keep) {
        verdicts[i] = Some(Verdict::Rejected {
            reason: ReasonCode::Surplus,
            message: format!("ranked below the top {keep} by promise"),
        });
    }
    for &i in &approved {
        verdicts[i] = Some(Verdict::Approved);
    }
    let verdicts: Vec<Verdict> = verdicts.into_iter().map(|v| v.expect("all decided")).collect();

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in &verdicts {
        let key = match v {
            Verdict::Approved => "approved",
            Verdict::Rejected { reason, .. } => match reason {
                ReasonCode::Schema => "schema",
                ReasonCode::Bounds => "bounds",
                ReasonCode::Rule => "rule",
                ReasonCode::Duplicate => "duplicate",
                ReasonCode::FailureProximity => "failure_proximity",
                ReasonCode::Surplus => "surplus",
            },
        };
        *counts.entry(key).or_default() += 1;
    }
    let comments = counts
        .iter()
        .map(|(k, n)| format!("{k}: {n}"))
        .collect::<Vec<_>>()
        .join(", ");

    CriticVerdict {
        verdicts,
        approved,
        comments,
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentParams {
    pub experiment_id: String,
    pub num_requests: u64,
    pub traffic_fraction: f64,
    pub seed: u64,
}

/// Builds the experiment spec for a set of approved task ids and transitions
/// their records Proposed -> Approved. Control is the current best elite's
/// config, falling back to the initial config before any launch.
pub fn online_prepare(
    approved_task_ids: &[String],
    skill: &Skill,
    store: &MemoryStore,
    scenario_name: &str,
    params: &ExperimentParams,
) -> Result<ExperimentSpec, AgentError> {
    if approved_task_ids.is_empty() {
        return Err(AgentError::EmptyApproved);
    }
    let archive = store.load_archive()?;
    let control = archive
        .entries
        .first()
        .and_then(|e| SystemConfig::from_canonical(&e.config).ok())
        .unwrap_or_else(|| skill.initial_config.clone());
    let mut arms = Vec::new();
    for id in approved_task_ids {
        let record = store.update_task(id, |r| r.status = TaskStatus::Approved)?;
        let config = record
            .parsed_config()
            .map_err(MemoryError::Corrupt)?;
        arms.push((id.clone(), config));
    }
    Ok(ExperimentSpec {
        experiment_id: params.experiment_id.clone(),
        scenario: scenario_name.to_string(),
        control,
        arms,
        num_requests: params.num_requests,
        traffic_fraction: params.traffic_fraction,
        seed: params.seed,
    })
}

/// Review gate denial: every named record transitions Proposed -> Rejected.
pub fn online_decline(
    task_ids: &[String],
    store: &MemoryStore,
    comment: &str,
) -> Result<(), AgentError> {
    for id in task_ids {
        store.update_task(id, |r| {
            r.status = TaskStatus::Rejected;
            r.check_info = Some(crate::memory::CheckInfo {
                outcome: "review_declined".into(),
                comments: comment.to_string(),
            });
        })?;
    }
    Ok(())
}

/// Submits the spec and marks every arm's record Running.
pub fn online_submit(
    platform: &dyn ExperimentPlatform,
    spec: &ExperimentSpec,
    store: &MemoryStore,
) -> Result<String, AgentError> {
    let handle = platform.submit(spec)?;
    for (task_id, _) in &spec.arms {
        store.update_task(task_id, |r| r.status = TaskStatus::Running)?;
    }
    Ok(handle)
}

/// Collects a finished experiment into memory: Done attaches each arm's report
/// and completes its record; Failed fails every arm without results. Records
/// already in a terminal state are left untouched, so re-collecting the same
/// handle is idempotent.
pub fn online_collect(
    platform: &dyn ExperimentPlatform,
    handle: &str,
    spec: &ExperimentSpec,
    store: &MemoryStore,
) -> Result<Vec<TaskRecord>, AgentError> {
    let status = platform.status(handle)?;
    let mut updated = Vec::new();
    match status {
        ExperimentStatus::Pending | ExperimentStatus::Running => {
            return Err(AgentError::Abtest(AbtestError::NotDone(handle.to_string())));
        }
        ExperimentStatus::Failed => {
            for (task_id, _) in &spec.arms {
                let record = store.read_task(task_id)?;
                if record.status == TaskStatus::Running {
                    updated.push(store.update_task(task_id, |r| r.status = TaskStatus::Failed)?);
                } else {
                    updated.push(record);
                }
            }
        }
        ExperimentStatus::Done => {
            let reports = platform.fetch(handle)?;
            for (task_id, _) in &spec.arms {
                let report = reports
                    .get(task_id)
                    .ok_or_else(|| AgentError::UnknownArm(task_id.clone()))?;
                let record = store.read_task(task_id)?;
                if record.status == TaskStatus::Running {
                    updated.push(store.update_task(task_id, |r| {
                        r.status = TaskStatus::Completed;
                        r.results = Some(report.clone());
                    })?);
                } else {
                    updated.push(record);
                }
            }
        }
    }
    Ok(updated)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInsight {
    /// |Pearson correlation| of normalized parameter delta vs utility delta;
    /// None until the parameter has varied in enough completed tasks.
    pub sensitivity: Option<f64>,
    pub samples: u64,
    /// Sign of the correlation: 1, -1, or 0 when undefined.
    pub trend: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scope", content = "skills")]
pub enum InsightScope {
    SelfSkill(String),
    Cross(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsightReport {
    pub scope: InsightScope,
    pub params: BTreeMap<String, ParamInsight>,
    pub patterns: Vec<KnowledgeEntry>,
}

impl InsightReport {
    pub fn empty(scope: InsightScope) -> Self {
        Self {
            scope,
            params: BTreeMap::new(),
            patterns: Vec::new(),
        }
    }
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Utility delta vs control: direction-adjusted sum of (treatment − control)
/// over the primary metrics.
fn utility_delta(report: &MetricReport, skill: &Skill) -> Option<f64> {
    let mut total = 0.0;
    for p in &skill.north_star.primary {
        let cmp = report.metrics.get(&p.metric)?;
        total += p.direction.sign() * (cmp.treatment_mean - cmp.control_mean);
    }
    Some(total)
}

/// Learns per-parameter sensitivities from one skill's completed history.
///
/// For each completed task, the parameter delta is (value − initial) / range
/// and the outcome is the utility delta vs control. Sensitivity is the
/// absolute Pearson correlation of those series, defined only when the
/// parameter actually moved in at least 3 completed tasks. Strong correlations
/// (|r| ≥ 0.5, n ≥ 5) become monotonicity knowledge entries with task-id
/// provenance.
pub fn insight_self_learn(
    records: &[TaskRecord],
    skill: &Skill,
    now: DateTime<Utc>,
) -> InsightReport {
    let scope = InsightScope::SelfSkill(skill.name.clone());
    let completed: Vec<(&TaskRecord, SystemConfig, f64)> = records
        .iter()
        .filter(|r| r.status == TaskStatus::Completed)
        .filter_map(|r| {
            let config = r.parsed_config().ok()?;
            let du = utility_delta(r.results.as_ref()?, skill)?;
            Some((r, config, du))
        })
        .collect();
    if completed.len() < 3 {
        return InsightReport::empty(scope);
    }

    let mut report = InsightReport::empty(scope);
    for (name, spec) in &skill.requirement.search_space.params {
        let initial = skill.initial_config.params.get(name).copied();
        let mut dps = Vec::new();
        let mut dus = Vec::new();
        let mut task_ids = Vec::new();
        for (rec, config, du) in &completed {
            let (Some(v), Some(init)) = (config.params.get(name), initial) else {
                continue;
            };
            dps.push((v - init) / spec.range());
            dus.push(*du);
            task_ids.push(rec.id.clone());
        }
        let varied = dps.iter().filter(|d| d.abs() > 0.0).count();
        let corr = if varied >= 3 {
            pearson(&dps, &dus)
        } else {
            None
        };
        let insight = ParamInsight {
            sensitivity: corr.map(f64::abs),
            samples: dps.len() as u64,
            trend: corr.map_or(0, |c| if c > 0.0 { 1 } else if c < 0.0 { -1 } else { 0 }),
        };
        if let Some(c) = corr {
            if c.abs() >= PATTERN_MIN_CORRELATION && dps.len() as u64 >= PATTERN_MIN_SAMPLES {
                let (text, rule) = if c < 0.0 {
                    (
                        format!("increasing {name} correlates with decreasing utility (r = {c:.3})"),
                        Rule::MonotoneUpHurts {
                            parameter: name.clone(),
                            metric: "utility".into(),
                        },
                    )
                } else {
                    (
                        format!("decreasing {name} correlates with decreasing utility (r = {c:.3})"),
                        Rule::MonotoneDownHurts {
                            parameter: name.clone(),
                            metric: "utility".into(),
                        },
                    )
                };
                report.patterns.push(KnowledgeEntry {
                    text,
                    rule: Some(rule),
                    provenance: Provenance::Learned {
                        task_ids: task_ids.clone(),
                    },
                    created_at: now.to_rfc3339(),
                    confidence: c.abs(),
                });
            }
        }
        report.params.insert(name.clone(), insight);
    }
    report
}

/// Reduces per-skill reports: sample-count-weighted mean sensitivity and
/// majority trend per shared parameter. Commutative, so the map phase can
/// complete in any order.
pub fn insight_cross_learn(reports: &[InsightReport]) -> InsightReport {
    let mut skills: Vec<String> = reports
        .iter()
        .map(|r| match &r.scope {
            InsightScope::SelfSkill(name) => vec![name.clone()],
            InsightScope::Cross(names) => names.clone(),
        })
        .collect::<Vec<_>>()
        .concat();
    skills.sort();
    skills.dedup();

    let mut merged: BTreeMap<String, (f64, u64, u64, i64)> = BTreeMap::new();
    for report in reports {
        for (name, insight) in &report.params {
            let slot = merged.entry(name.clone()).or_insert((0.0, 0, 0, 0));
            slot.2 += insight.samples;
            if let Some(s) = insight.sensitivity {
                slot.0 += s * insight.samples as f64;
                slot.1 += insight.samples;
            }
            slot.3 += insight.trend as i64;
        }
    }
    let params = merged
        .into_iter()
        .map(|(name, (weighted, defined_n, total_n, trend_sum))| {
            (
                name,
                ParamInsight {
                    sensitivity: (defined_n > 0).then(|| weighted / defined_n as f64),
                    samples: total_n,
                    trend: trend_sum.signum() as i8,
                },
            )
        })
        .collect();

    let mut patterns: Vec<KnowledgeEntry> = Vec::new();
    for report in reports {
        for entry in &report.patterns {
            let dup = patterns.iter().any(|p| match (&p.rule, &entry.rule) {
                (Some(a), Some(b)) => {
                    a.parameter() == b.parameter() && a.relation_name() == b.relation_name()
                }
                _ => false,
            });
            if !dup {
                patterns.push(entry.clone());
            }
        }
    }
    patterns.sort_by(|a, b| {
        let key = |e: &KnowledgeEntry| {
            e.rule
                .as_ref()
                .map(|r| (r.parameter().to_string(), r.relation_name()))
                .unwrap_or_default()
        };
        key(a).cmp(&key(b))
    });

    InsightReport {
        scope: InsightScope::Cross(skills),
        params,
        patterns,
    }
}

/// Evolves a skill one version: appends deduplicated pattern knowledge, marks
/// the top-quartile-sensitivity parameters sensitive, and (once at least 5
/// tasks have completed) tightens each parameter's bounds to the elite hull
/// plus a 20%-of-range margin, never widening past the v1 bounds.
pub fn skill_evolve(
    skill: &Skill,
    report: &InsightReport,
    records: &[TaskRecord],
    archive: &EliteArchive,
    v1_space: &SearchSpace,
    now: DateTime<Utc>,
) -> Result<Skill, AgentError> {
    match &report.scope {
        InsightScope::SelfSkill(name) if name == &skill.name => {}
        _ => return Err(AgentError::ScopeMismatch(skill.name.clone())),
    }
    let mut next = skill.clone();
    next.version += 1;

    for entry in &report.patterns {
        let dup = next.domain_knowledge.iter().any(|k| match (&k.rule, &entry.rule) {
            (Some(a), Some(b)) => {
                a.parameter() == b.parameter() && a.relation_name() == b.relation_name()
            }
            _ => false,
        });
        if !dup {
            let mut entry = entry.clone();
            entry.created_at = now.to_rfc3339();
            next.domain_knowledge.push(entry);
        }
    }

    let mut ranked: Vec<(&String, f64)> = report
        .params
        .iter()
        .filter_map(|(name, p)| p.sensitivity.map(|s| (name, s)))
        .collect();
    if !ranked.is_empty() {
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        let quartile = ranked.len().div_ceil(4);
        for (name, _) in ranked.into_iter().take(quartile) {
            if let Some(spec) = next.requirement.search_space.params.get_mut(name) {
                spec.sensitive = true;
            }
        }
    }

    let completed = records
        .iter()
        .filter(|r| r.status == TaskStatus::Completed)
        .count();
    let elite_configs: Vec<SystemConfig> = archive
        .entries
        .iter()
        .filter_map(|e| SystemConfig::from_canonical(&e.config).ok())
        .collect();
    if completed >= EVOLVE_MIN_COMPLETED && !elite_configs.is_empty() {
        for (name, spec) in next.requirement.search_space.params.iter_mut() {
            let values: Vec<f64> = elite_configs
                .iter()
                .filter_map(|c| c.params.get(name).copied())
                .collect();
            if values.is_empty() {
                continue;
            }
            let hull_lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hull_hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let margin = EVOLVE_HULL_MARGIN * spec.range();
            let v1 = v1_space.params.get(name).copied().unwrap_or(*spec);
            let mut lo = (hull_lo - margin).max(v1.lower);
            let mut hi = (hull_hi + margin).min(v1.upper);
            if spec.kind == ParamKind::Integer {
                lo = lo.floor();
                hi = hi.ceil();
            }
            if !(lo < hi) {
                continue;
            }
            spec.lower = lo;
            spec.upper = hi;
        }
        let space = &next.requirement.search_space;
        if !elite_configs.iter().any(|c| space.validate_config(c).is_ok()) {
            return Err(AgentError::EvolutionInconsistent(skill.name.clone()));
        }
        for (name, spec) in &space.params.clone() {
            if let Some(v) = next.initial_config.params.get_mut(name) {
                *v = spec.clip(*v);
            }
        }
    }

    next.validate()?;
    Ok(next)
}

/// Composes two skills into a joint one: parameters and initial configs merge
/// under `<skill>/` prefixes, primary metrics union, guardrails union with the
/// stricter baseline winning, knowledge merges with rules re-prefixed.
pub fn skill_compose(a: &Skill, b: &Skill) -> Result<Skill, AgentError> {
    if a.name == b.name {
        return Err(AgentError::Compose("skill names must differ".into()));
    }
    for (x, y) in [(a, b), (b, a)] {
        for p in &x.north_star.primary {
            if y.north_star.guardrails.iter().any(|g| g.metric == p.metric) {
                return Err(AgentError::Compose(format!(
                    "metric `{}` is primary in `{}` but a guardrail in `{}`",
                    p.metric, x.name, y.name
                )));
            }
        }
    }

    let prefix_config = |skill: &Skill| -> BTreeMap<String, f64> {
        skill
            .initial_config
            .params
            .iter()
            .map(|(k, v)| (format!("{}/{k}", skill.name), *v))
            .collect()
    };
    let mut params = BTreeMap::new();
    for skill in [a, b] {
        for (name, spec) in &skill.requirement.search_space.params {
            params.insert(format!("{}/{name}", skill.name), *spec);
        }
    }
    let mut initial = prefix_config(a);
    initial.extend(prefix_config(b));

    let mut primary = a.north_star.primary.clone();
    for p in &b.north_star.primary {
        match primary.iter().find(|q| q.metric == p.metric) {
            Some(q) if q.direction != p.direction => {
                return Err(AgentError::Compose(format!(
                    "metric `{}` has conflicting primary directions",
                    p.metric
                )));
            }
            Some(_) => {}
            None => primary.push(p.clone()),
        }
    }
    let mut guardrails = a.north_star.guardrails.clone();
    for g in &b.north_star.guardrails {
        match guardrails.iter_mut().find(|h| h.metric == g.metric) {
            Some(h) if h.direction != g.direction => {
                return Err(AgentError::Compose(format!(
                    "guardrail `{}` has conflicting directions",
                    g.metric
                )));
            }
            Some(h) => {
                // stricter = harder to satisfy in the guardrail's direction
                let stricter = match h.direction {
                    crate::objective::Direction::Increase => h.baseline.max(g.baseline),
                    crate::objective::Direction::Decrease => h.baseline.min(g.baseline),
                };
                h.baseline = stricter;
            }
            None => guardrails.push(g.clone()),
        }
    }

    let mut knowledge = Vec::new();
    for skill in [a, b] {
        for entry in &skill.domain_knowledge {
            let mut entry = entry.clone();
            if let Some(rule) = &mut entry.rule {
                let renamed = format!("{}/{}", skill.name, rule.parameter());
                match rule {
                    Rule::LeThreshold { parameter, .. }
                    | Rule::GeThreshold { parameter, .. }
                    | Rule::MonotoneUpHurts { parameter, .. }
                    | Rule::MonotoneDownHurts { parameter, .. } => *parameter = renamed,
                }
            }
            knowledge.push(entry);
        }
    }
    let mut tools = a.tools.clone();
    for t in &b.tools {
        if !tools.iter().any(|u| u.id == t.id) {
            tools.push(t.clone());
        }
    }

    let composed = Skill {
        name: format!("{}+{}", a.name, b.name),
        version: 1,
        task_context: format!("{}\n\n{}", a.task_context, b.task_context),
        requirement: crate::skillhub::Requirement {
            search_space: SearchSpace { params },
            output_schema: a.requirement.output_schema.clone(),
            infra_constraints: format!(
                "{}; {}",
                a.requirement.infra_constraints, b.requirement.infra_constraints
            ),
        },
        north_star: crate::objective::NorthStar {
            primary,
            guardrails,
        },
        initial_config: SystemConfig { params: initial },
        domain_knowledge: knowledge,
        tools,
    };
    composed.validate()?;
    Ok(composed)
}
