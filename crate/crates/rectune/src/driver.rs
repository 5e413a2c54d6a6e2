//! Loop orchestration over an initialized working directory.
//!
//! A workdir holds `scenario.json`, `skills/<name>/v<N>.json`, `memory/<name>/`
//! and `reports/`, plus an append-only `manifest.json`. Each round runs
//! propose -> critic -> review gate -> per-arm experiments -> collect -> prune
//! -> insight -> evolve. Experiments are submitted one arm at a time so a
//! single invalid config fails alone instead of sinking its round.

use crate::abtest::{ExperimentSpec, SimulatedPlatform};
use crate::agents::{
    self, AgentError, EliteSnapshot, ExperimentParams, ProposedCandidate, ProposerBackend,
    Verdict,
};
use crate::memory::{atomic_write, CheckInfo, MemoryError, MemoryStore, TaskRecord, TaskStatus};
use crate::rng::derive_key;
use crate::scenario::{Scenario, ScenarioError};
use crate::simpipeline::Simulator;
use crate::skillhub::{load_skill, save_skill, Skill, SkillError};
use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Abtest(#[from] crate::abtest::AbtestError),
    #[error("workdir `{0}` is not initialized (missing {1})")]
    NotInitialized(PathBuf, &'static str),
    #[error("workdir `{0}` already initialized; pass force to overwrite")]
    AlreadyInitialized(PathBuf),
    #[error("review gate requires a decision and none is available; pass auto-approve or run interactively")]
    ReviewUnavailable,
    #[error("interrupted")]
    Interrupted,
}

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn sigint_handler(_sig: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

/// Installs a SIGINT handler that sets a flag checked between rounds, so an
/// interrupted loop stops at a consistent point instead of mid-write.
pub fn install_sigint_handler() {
    let handler: extern "C" fn(libc::c_int) = sigint_handler;
    unsafe {
        libc::signal(libc::SIGINT, handler as usize as libc::sighandler_t);
    }
}

pub fn interrupted() -> bool {
    INTERRUPTED.load(Ordering::SeqCst)
}

#[cfg(test)]
pub(crate) fn set_interrupted(v: bool) {
    INTERRUPTED.store(v, Ordering::SeqCst);
}

/// Timestamp source recorded in the manifest. The fixed variant makes every
/// timestamp in memory files a pure function of the tick counter, so golden
/// tests can cover them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ClockSpec {
    System,
    Fixed { start_epoch_secs: i64, step_secs: i64 },
}

pub struct Clock {
    spec: ClockSpec,
    ticks: std::cell::Cell<i64>,
}

impl Clock {
    pub fn new(spec: ClockSpec) -> Self {
        Self {
            spec,
            ticks: std::cell::Cell::new(0),
        }
    }

    pub fn now(&self) -> DateTime<Utc> {
        let t = self.ticks.get();
        self.ticks.set(t + 1);
        match self.spec {
            ClockSpec::System => Utc::now(),
            ClockSpec::Fixed {
                start_epoch_secs,
                step_secs,
            } => Utc
                .timestamp_opt(start_epoch_secs + t * step_secs, 0)
                .single()
                .expect("fixed clock in range"),
        }
    }

    pub fn ticks(&self) -> i64 {
        self.ticks.get()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub arm_count: usize,
    pub completed: usize,
    pub failed: usize,
    pub rejected: usize,
    /// Best archive utility after the round, when any elite exists.
    pub best_utility: Option<f64>,
    pub best_task_id: Option<String>,
    pub skill_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub skill_name: String,
    pub skill_version: u32,
    pub scenario: String,
    pub clock: ClockSpec,
    pub clock_ticks: i64,
    pub rounds_completed: usize,
    pub rounds: Vec<RoundSummary>,
}

pub fn manifest_path(workdir: &Path) -> PathBuf {
    workdir.join("manifest.json")
}

pub fn load_manifest(workdir: &Path) -> Result<RunManifest, DriverError> {
    let path = manifest_path(workdir);
    if !path.exists() {
        return Err(DriverError::NotInitialized(workdir.to_path_buf(), "manifest.json"));
    }
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn save_manifest(workdir: &Path, manifest: &RunManifest) -> Result<(), DriverError> {
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    atomic_write(&manifest_path(workdir), json.as_bytes())?;
    Ok(())
}

/// Creates the workdir skeleton: validated copies of the scenario and skill
/// (as `skills/<name>/v1.json`), empty memory and reports directories, and a
/// fresh manifest.
pub fn init_workdir(
    workdir: &Path,
    skill: &Skill,
    scenario: &Scenario,
    force: bool,
) -> Result<(), DriverError> {
    skill.validate()?;
    scenario.validate()?;
    if manifest_path(workdir).exists() && !force {
        return Err(DriverError::AlreadyInitialized(workdir.to_path_buf()));
    }
    std::fs::create_dir_all(workdir.join("skills"))?;
    std::fs::create_dir_all(workdir.join("memory"))?;
    std::fs::create_dir_all(workdir.join("reports"))?;
    atomic_write(
        &workdir.join("scenario.json"),
        scenario.canonical_json().as_bytes(),
    )?;
    let skill_path = Skill::version_path(&workdir.join("skills"), &skill.name, skill.version);
    std::fs::create_dir_all(skill_path.parent().unwrap())?;
    save_skill(skill, &skill_path)?;
    let manifest = RunManifest {
        skill_name: skill.name.clone(),
        skill_version: skill.version,
        scenario: scenario.name.clone(),
        clock: ClockSpec::System,
        clock_ticks: 0,
        rounds_completed: 0,
        rounds: Vec::new(),
    };
    save_manifest(workdir, &manifest)
}

pub fn load_scenario(workdir: &Path) -> Result<Scenario, DriverError> {
    let path = workdir.join("scenario.json");
    if !path.exists() {
        return Err(DriverError::NotInitialized(workdir.to_path_buf(), "scenario.json"));
    }
    Ok(Scenario::load(&path)?)
}

/// Highest version on disk for a skill name.
pub fn latest_skill_version(workdir: &Path, name: &str) -> Result<u32, DriverError> {
    let dir = workdir.join("skills").join(name);
    if !dir.exists() {
        return Err(DriverError::NotInitialized(workdir.to_path_buf(), "skills"));
    }
    let mut best = 0;
    for entry in std::fs::read_dir(&dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(v) = name
            .strip_prefix('v')
            .and_then(|s| s.strip_suffix(".json"))
            .and_then(|s| s.parse::<u32>().ok())
        {
            best = best.max(v);
        }
    }
    if best == 0 {
        return Err(DriverError::NotInitialized(workdir.to_path_buf(), "skills"));
    }
    Ok(best)
}

pub fn load_latest_skill(workdir: &Path, name: &str) -> Result<Skill, DriverError> {
    let version = latest_skill_version(workdir, name)?;
    Ok(load_skill(&Skill::version_path(
        &workdir.join("skills"),
        name,
        version,
    ))?)
}

#[derive(Clone)]
pub struct LoopConfig {
    pub rounds: usize,
    pub batch: usize,
    pub proposer: ProposerBackend,
    pub critic_enabled: bool,
    pub seed: u64,
    pub num_requests: u64,
    pub traffic_fraction: f64,
    pub elite_capacity: usize,
    /// One experiment seed for the whole run keeps utilities comparable
    /// across rounds (and lets the platform reuse its caches).
    pub experiment_seed: u64,
    pub clock: ClockSpec,
}

impl LoopConfig {
    pub fn new(rounds: usize, batch: usize, seed: u64) -> Self {
        Self {
            rounds,
            batch,
            proposer: ProposerBackend::Heuristic,
            critic_enabled: true,
            seed,
            num_requests: 400,
            traffic_fraction: 0.1,
            elite_capacity: 10,
            experiment_seed: 0,
            clock: ClockSpec::System,
        }
    }
}

/// Review decision for one prepared experiment.
pub enum ReviewDecision {
    Approve,
    Decline,
    /// No decision source (no TTY, no auto-approve flag).
    Unavailable,
}

/// Callbacks a host wires into the loop: the human review gate and an
/// optional proposal mutator (used by ablation and fault-injection tests).
pub struct LoopHooks<'a> {
    pub review: Box<dyn FnMut(&ExperimentSpec) -> ReviewDecision + 'a>,
    pub mutate_proposals: Option<Box<dyn FnMut(usize, &mut Vec<ProposedCandidate>) + 'a>>,
}

impl Default for LoopHooks<'_> {
    fn default() -> Self {
        Self {
            review: Box::new(|_| ReviewDecision::Approve),
            mutate_proposals: None,
        }
    }
}

fn resolve_stale_running(store: &MemoryStore) -> Result<usize, DriverError> {
    let mut resolved = 0;
    for record in store.list_tasks()? {
        if record.status == TaskStatus::Running {
            store.update_task(&record.id, |r| {
                r.status = TaskStatus::Failed;
                r.check_info = Some(CheckInfo {
                    outcome: "stale".into(),
                    comments: "resolved as failed after an interrupted round".into(),
                });
            })?;
            resolved += 1;
        }
    }
    Ok(resolved)
}

/// Runs `config.rounds` optimization rounds against the simulated platform,
/// appending one summary per round to the manifest. Returns the final
/// manifest. A SIGINT between rounds stops with `DriverError::Interrupted`
/// after the manifest is saved.
pub fn run_loop(
    workdir: &Path,
    config: &LoopConfig,
    hooks: &mut LoopHooks<'_>,
) -> Result<RunManifest, DriverError> {
    let scenario = load_scenario(workdir)?;
    let mut manifest = load_manifest(workdir)?;
    let skill_name = manifest.skill_name.clone();
    let mut skill = load_latest_skill(workdir, &skill_name)?;
    let v1 = load_skill(&Skill::version_path(
        &workdir.join("skills"),
        &skill_name,
        1,
    ))?;
    let v1_space = v1.requirement.search_space.clone();
    let store = MemoryStore::open(workdir.join("memory").join(&skill_name))?;
    let platform = SimulatedPlatform::new(scenario.clone(), v1_space.clone());
    let clock = Clock::new(config.clock);
    manifest.clock = config.clock;

    let start_round = manifest.rounds_completed;
    for round in start_round..start_round + config.rounds {
        if interrupted() {
            manifest.clock_ticks = clock.ticks();
            save_manifest(workdir, &manifest)?;
            return Err(DriverError::Interrupted);
        }
        resolve_stale_running(&store)?;

        let archive = store.load_archive()?;
        let elites: Vec<EliteSnapshot> = archive
            .entries
            .iter()
            .filter_map(|e| {
                store.read_task(&e.task_id).ok().map(|record| EliteSnapshot {
                    record,
                    utility: e.utility,
                })
            })
            .collect();

        let round_seed = derive_key(&[config.seed, round as u64]);
        let mut proposals =
            match agents::actor_propose(&skill, &elites, config.batch, &config.proposer, round_seed)
            {
                Ok(p) => p,
                // LLM failures degrade to the heuristic backend, never stall
                Err(AgentError::LlmBackend { .. }) => agents::actor_propose(
                    &skill,
                    &elites,
                    config.batch,
                    &ProposerBackend::Heuristic,
                    round_seed,
                )?,
                Err(e) => return Err(e.into()),
            };
        if let Some(mutate) = hooks.mutate_proposals.as_mut() {
            mutate(round, &mut proposals);
        }

        let history = store.list_tasks()?;
        let verdicts: Vec<Verdict> = if config.critic_enabled {
            let verdict =
                agents::critic_review(&proposals, &skill, &history, &archive, config.batch);
            verdict.verdicts
        } else {
            vec![Verdict::Approved; proposals.len()]
        };

        let mut approved_ids = Vec::new();
        let mut rejected = 0usize;
        for (i, (proposal, verdict)) in proposals.iter().zip(&verdicts).enumerate() {
            let id = format!("r{round:03}-c{i}");
            let mut record =
                TaskRecord::new(&id, &proposal.config, &proposal.explanation, clock.now());
            match verdict {
                Verdict::Approved => {
                    record.check_info = Some(CheckInfo {
                        outcome: "approved".into(),
                        comments: String::new(),
                    });
                    store.write_task(&record)?;
                    approved_ids.push(id);
                }
                Verdict::Rejected { reason, message } => {
                    record.status = TaskStatus::Rejected;
                    record.check_info = Some(CheckInfo {
                        outcome: format!("rejected:{reason:?}"),
                        comments: message.clone(),
                    });
                    store.write_task(&record)?;
                    rejected += 1;
                }
            }
        }

        let mut completed = 0usize;
        let mut failed = 0usize;
        let mut arm_count = 0usize;
        if !approved_ids.is_empty() {
            let params = ExperimentParams {
                experiment_id: format!("r{round:03}"),
                num_requests: config.num_requests,
                traffic_fraction: config.traffic_fraction,
                seed: config.experiment_seed,
            };
            let spec =
                agents::online_prepare(&approved_ids, &skill, &store, &scenario.name, &params)?;
            match (hooks.review)(&spec) {
                ReviewDecision::Unavailable => return Err(DriverError::ReviewUnavailable),
                ReviewDecision::Decline => {
                    // Approved records cannot legally return to Rejected, so a
                    // declined review resolves them through Running -> Failed.
                    for id in &approved_ids {
                        store.update_task(id, |r| r.status = TaskStatus::Running)?;
                        store.update_task(id, |r| {
                            r.status = TaskStatus::Failed;
                            r.check_info = Some(CheckInfo {
                                outcome: "review_declined".into(),
                                comments: "operator declined the experiment".into(),
                            });
                        })?;
                        failed += 1;
                    }
                }
                ReviewDecision::Approve => {
                    arm_count = spec.arms.len();
                    // one experiment per arm: an invalid config fails alone
                    for (task_id, config_arm) in &spec.arms {
                        let sub = ExperimentSpec {
                            experiment_id: format!("{}-{task_id}", spec.experiment_id),
                            scenario: spec.scenario.clone(),
                            control: spec.control.clone(),
                            arms: vec![(task_id.clone(), config_arm.clone())],
                            num_requests: spec.num_requests,
                            traffic_fraction: spec.traffic_fraction,
                            seed: spec.seed,
                        };
                        let handle = agents::online_submit(&platform, &sub, &store)?;
                        let updated = agents::online_collect(&platform, &handle, &sub, &store)?;
                        for record in updated {
                            match record.status {
                                TaskStatus::Completed => completed += 1,
                                _ => failed += 1,
                            }
                        }
                    }
                }
            }
        }

        let sim = Simulator::new(&scenario);
        store.prune_memory(config.elite_capacity, &skill.north_star, |c| {
            sim.compute_cost(c).ok().map(|cost| crate::objective::CostCheck {
                cost,
                max_cost: scenario.max_cost,
            })
        })?;

        let records = store.list_tasks()?;
        let insight = agents::insight_self_learn(&records, &skill, clock.now());
        let mut insight_json = serde_json::to_string_pretty(&insight)?;
        insight_json.push('\n');
        atomic_write(&store.insights_path(), insight_json.as_bytes())?;

        let archive = store.load_archive()?;
        match agents::skill_evolve(&skill, &insight, &records, &archive, &v1_space, clock.now()) {
            Ok(next) => {
                let path =
                    Skill::version_path(&workdir.join("skills"), &skill_name, next.version);
                save_skill(&next, &path)?;
                skill = next;
            }
            // an inconsistent evolution aborts the evolution step, not the run
            Err(AgentError::EvolutionInconsistent(_)) => {}
            Err(e) => return Err(e.into()),
        }

        manifest.rounds.push(RoundSummary {
            round: round + 1,
            arm_count,
            completed,
            failed,
            rejected,
            best_utility: archive.entries.first().map(|e| e.utility),
            best_task_id: archive.entries.first().map(|e| e.task_id.clone()),
            skill_version: skill.version,
        });
        manifest.rounds_completed = round + 1;
        manifest.skill_version = skill.version;
        manifest.clock_ticks = clock.ticks();
        save_manifest(workdir, &manifest)?;
    }
    Ok(manifest)
}

/// Verifies the archive's best config with a fresh experiment against the
/// initial config: returns the config, its report, and feasibility under
/// guardrails and cost.
pub struct Verification {
    pub task_id: String,
    pub config: crate::simpipeline::SystemConfig,
    pub report: crate::abtest::MetricReport,
    pub feasible: bool,
    pub utility: f64,
}

pub fn verify_best(
    workdir: &Path,
    num_requests: u64,
    experiment_seed: u64,
) -> Result<Option<Verification>, DriverError> {
    let scenario = load_scenario(workdir)?;
    let manifest = load_manifest(workdir)?;
    let skill = load_latest_skill(workdir, &manifest.skill_name)?;
    let v1 = load_skill(&Skill::version_path(
        &workdir.join("skills"),
        &manifest.skill_name,
        1,
    ))?;
    let store = MemoryStore::open(workdir.join("memory").join(&manifest.skill_name))?;
    let archive = store.load_archive()?;
    let Some(best) = archive.entries.first() else {
        return Ok(None);
    };
    let config = crate::simpipeline::SystemConfig::from_canonical(&best.config)
        .map_err(MemoryError::Corrupt)?;
    let spec = ExperimentSpec {
        experiment_id: "verify".into(),
        scenario: scenario.name.clone(),
        control: v1.initial_config.clone(),
        arms: vec![("best".into(), config.clone())],
        num_requests,
        traffic_fraction: 1.0,
        seed: experiment_seed,
    };
    let outcomes =
        crate::abtest::run_simulated_experiment(&spec, &scenario, &v1.requirement.search_space)?;
    let outcome = &outcomes["best"];
    let sim = Simulator::new(&scenario);
    let cost = sim.compute_cost(&config).ok().map(|cost| crate::objective::CostCheck {
        cost,
        max_cost: scenario.max_cost,
    });
    let values: std::collections::BTreeMap<String, f64> = outcome
        .treatment
        .metrics
        .iter()
        .map(|(k, v)| (k.clone(), v.mean))
        .collect();
    let u = crate::objective::utility(&values, &skill.north_star, cost)
        .map(|o| (o.feasible, o.value))
        .unwrap_or((false, f64::NEG_INFINITY));
    Ok(Some(Verification {
        task_id: best.task_id.clone(),
        config,
        report: outcome.report.clone(),
        feasible: u.0,
        utility: u.1,
    }))
}

/// Lets fixed-clock users express offsets without chrono arithmetic at call
/// sites.
pub fn fixed_clock(start_epoch_secs: i64, step_secs: i64) -> ClockSpec {
    ClockSpec::Fixed {
        start_epoch_secs,
        step_secs,
    }
}

pub fn epoch(dt: DateTime<Utc>) -> i64 {
    dt.timestamp()
}

pub fn plus_secs(dt: DateTime<Utc>, secs: i64) -> DateTime<Utc> {
    dt + Duration::seconds(secs)
}
