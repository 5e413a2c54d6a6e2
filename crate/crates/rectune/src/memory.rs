//! Persistent agent memory.
//!
//! One JSON file per task under `memory/<skill>/tasks/`, an elite index in
//! `elites.json`, and an advisory lock for single-writer enforcement. Task
//! history is append-only: pruning maintains the elite index but never deletes
//! records, so cross-learning always sees the full corpus. All writes go
//! through temp-file + atomic rename.

use crate::abtest::MetricReport;
use crate::objective::{utility, CostCheck, NorthStar, UtilityOutcome};
use crate::simpipeline::SystemConfig;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt record: {0}")]
    Corrupt(#[from] serde_json::Error),
    #[error("unknown task id `{0}`")]
    UnknownTask(String),
    #[error("duplicate task id `{0}`")]
    DuplicateTask(String),
    #[error("illegal status transition {from:?} -> {to:?} for task `{id}`")]
    IllegalTransition {
        id: String,
        from: TaskStatus,
        to: TaskStatus,
    },
    #[error("results must be present exactly when status is Completed (task `{0}`)")]
    ResultsMismatch(String),
    #[error("another writer holds the memory lock at {0}")]
    LockConflict(PathBuf),
    #[error("metric sets differ across candidates: {0}")]
    MetricMismatch(String),
}

/// Writes `bytes` to `path` via a temp file in the same directory plus an
/// atomic rename, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("file"),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskStatus {
    Proposed,
    Approved,
    Rejected,
    Running,
    Completed,
    Failed,
}

impl TaskStatus {
    /// Proposed -> {Approved, Rejected}; Approved -> Running -> {Completed, Failed}.
    pub fn can_transition(self, to: TaskStatus) -> bool {
        use TaskStatus::*;
        matches!(
            (self, to),
            (Proposed, Approved)
                | (Proposed, Rejected)
                | (Approved, Running)
                | (Running, Completed)
                | (Running, Failed)
        )
    }
}

/// Critic rule outcomes recorded alongside a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckInfo {
    pub outcome: String,
    pub comments: String,
}

/// One proposed configuration's lifecycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    /// Canonical config string; parse with `SystemConfig::from_canonical`.
    pub config: String,
    pub explanation: String,
    /// RFC 3339 UTC.
    pub proposed_time: String,
    pub status: TaskStatus,
    pub results: Option<MetricReport>,
    pub check_info: Option<CheckInfo>,
}

impl TaskRecord {
    pub fn new(id: impl Into<String>, config: &SystemConfig, explanation: impl Into<String>, proposed_time: DateTime<Utc>) -> Self {
        Self {
            id: id.into(),
            config: config.canonical_string(),
            explanation: explanation.into(),
            proposed_time: proposed_time.to_rfc3339(),
            status: TaskStatus::Proposed,
            results: None,
            check_info: None,
        }
    }

    pub fn parsed_config(&self) -> Result<SystemConfig, serde_json::Error> {
        SystemConfig::from_canonical(&self.config)
    }

    fn validate(&self) -> Result<(), MemoryError> {
        let has_results = self.results.is_some();
        if has_results != (self.status == TaskStatus::Completed) {
            return Err(MemoryError::ResultsMismatch(self.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliteEntry {
    pub task_id: String,
    pub config: String,
    /// Direction-adjusted treatment means, one per north-star metric.
    pub adjusted_metrics: BTreeMap<String, f64>,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EliteArchive {
    /// Ordered by utility descending.
    pub entries: Vec<EliteEntry>,
    pub capacity: usize,
}

struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Single-writer handle on one skill's memory directory.
pub struct MemoryStore {
    root: PathBuf,
    _lock: LockGuard,
}

impl MemoryStore {
    /// Opens (creating if needed) `dir`, acquiring the advisory lock.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, MemoryError> {
        let root: PathBuf = dir.into();
        fs::create_dir_all(root.join("tasks"))?;
        let lock_path = root.join("lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock_path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(MemoryError::LockConflict(lock_path));
            }
            Err(e) => return Err(e.into()),
        }
        Ok(Self {
            root,
            _lock: LockGuard { path: lock_path },
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn task_path(&self, id: &str) -> PathBuf {
        self.root.join("tasks").join(format!("{id}.json"))
    }

    fn elites_path(&self) -> PathBuf {
        self.root.join("elites.json")
    }

    pub fn insights_path(&self) -> PathBuf {
        self.root.join("insights.json")
    }

    /// Writes a new record. Durable on return; rereads equal what was written.
    pub fn write_task(&self, record: &TaskRecord) -> Result<(), MemoryError> {
        record.validate()?;
        let path = self.task_path(&record.id);
        if path.exists() {
            return Err(MemoryError::DuplicateTask(record.id.clone()));
        }
        self.persist(record)
    }

    fn persist(&self, record: &TaskRecord) -> Result<(), MemoryError> {
        let mut json = serde_json::to_string_pretty(record)?;
        json.push('\n');
        atomic_write(&self.task_path(&record.id), json.as_bytes())?;
        Ok(())
    }

    pub fn read_task(&self, id: &str) -> Result<TaskRecord, MemoryError> {
        let path = self.task_path(id);
        if !path.exists() {
            return Err(MemoryError::UnknownTask(id.to_string()));
        }
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Applies `delta` to an existing record, enforcing the status machine.
    pub fn update_task(
        &self,
        id: &str,
        delta: impl FnOnce(&mut TaskRecord),
    ) -> Result<TaskRecord, MemoryError> {
        let before = self.read_task(id)?;
        let mut after = before.clone();
        delta(&mut after);
        after.id = before.id.clone(); // ids are immutable
        if after.status != before.status && !before.status.can_transition(after.status) {
            return Err(MemoryError::IllegalTransition {
                id: id.to_string(),
                from: before.status,
                to: after.status,
            });
        }
        after.validate()?;
        self.persist(&after)?;
        Ok(after)
    }

    /// All records, sorted by id. Temp files from interrupted writes are
    /// ignored.
    pub fn list_tasks(&self) -> Result<Vec<TaskRecord>, MemoryError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("tasks"))? {
            let entry = entry?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if !name.ends_with(".json") || name.starts_with('.') {
                continue;
            }
            let text = fs::read_to_string(entry.path())?;
            out.push(serde_json::from_str::<TaskRecord>(&text)?);
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    pub fn load_archive(&self) -> Result<EliteArchive, MemoryError> {
        let path = self.elites_path();
        if !path.exists() {
            return Ok(EliteArchive::default());
        }
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn save_archive(&self, archive: &EliteArchive) -> Result<(), MemoryError> {
        let mut json = serde_json::to_string_pretty(archive)?;
        json.push('\n');
        atomic_write(&self.elites_path(), json.as_bytes())?;
        Ok(())
    }

    /// Rebuilds the elite index: completed + feasible records, Pareto-pruned,
    /// then diversity-selected down to `capacity`. History files are left
    /// untouched.
    pub fn prune_memory(
        &self,
        capacity: usize,
        north_star: &NorthStar,
        cost: impl Fn(&SystemConfig) -> Option<CostCheck>,
    ) -> Result<EliteArchive, MemoryError> {
        let mut candidates: Vec<EliteEntry> = Vec::new();
        for record in self.list_tasks()? {
            if record.status != TaskStatus::Completed {
                continue;
            }
            let Some(report) = &record.results else { continue };
            let Ok(config) = record.parsed_config() else { continue };
            let Some(entry) = elite_entry(&record.id, &config, report, north_star, cost(&config))
            else {
                continue;
            };
            candidates.push(entry);
        }
        candidates.sort_by(|a, b| a.task_id.cmp(&b.task_id));

        let metric_names: Vec<String> = north_star.metric_names();
        let vectors: Vec<Vec<f64>> = candidates
            .iter()
            .map(|c| metric_names.iter().map(|m| c.adjusted_metrics[m]).collect())
            .collect();
        let survivors = pareto_prune_adjusted(&vectors);
        let mut elite: Vec<EliteEntry> = survivors
            .iter()
            .map(|&i| candidates[i].clone())
            .collect();

        if elite.len() > capacity {
            let pts: Vec<Vec<f64>> = survivors.iter().map(|&i| vectors[i].clone()).collect();
            let utilities: Vec<f64> = elite.iter().map(|e| e.utility).collect();
            let keep = select_diverse(&pts, &utilities, capacity);
            elite = keep.into_iter().map(|i| elite[i].clone()).collect();
        }
        elite.sort_by(|a, b| b.utility.total_cmp(&a.utility).then(a.task_id.cmp(&b.task_id)));
        let archive = EliteArchive {
            entries: elite,
            capacity,
        };
        self.save_archive(&archive)?;
        Ok(archive)
    }

    /// Elite task records ordered by utility descending, truncated to `limit`.
    pub fn read_elites(&self, limit: usize) -> Result<Vec<TaskRecord>, MemoryError> {
        let archive = self.load_archive()?;
        archive
            .entries
            .iter()
            .take(limit)
            .map(|e| self.read_task(&e.task_id))
            .collect()
    }
}

/// Builds an elite candidate from a completed record's report: treatment
/// means per north-star metric, direction-adjusted, plus absolute utility.
/// Returns `None` for infeasible candidates.
pub fn elite_entry(
    task_id: &str,
    config: &SystemConfig,
    report: &MetricReport,
    north_star: &NorthStar,
    cost: Option<CostCheck>,
) -> Option<EliteEntry> {
    let mut raw = BTreeMap::new();
    for name in north_star.metric_names() {
        let cmp = report.metrics.get(&name)?;
        raw.insert(name, cmp.treatment_mean);
    }
    let UtilityOutcome { feasible, value } = utility(&raw, north_star, cost).ok()?;
    if !feasible {
        return None;
    }
    let adjusted = raw
        .into_iter()
        .map(|(name, v)| {
            let sign = north_star.direction_of(&name).map_or(1.0, |d| d.sign());
            (name, sign * v)
        })
        .collect();
    Some(EliteEntry {
        task_id: task_id.to_string(),
        config: config.canonical_string(),
        adjusted_metrics: adjusted,
        utility: value,
    })
}

/// Pareto pruning over named metric vectors with explicit directions.
/// Returns surviving indices in input order. A candidate is discarded iff some
/// other is at least as good everywhere and strictly better somewhere;
/// duplicates all survive.
pub fn pareto_prune(
    candidates: &[BTreeMap<String, f64>],
    directions: &BTreeMap<String, crate::objective::Direction>,
) -> Result<Vec<usize>, MemoryError> {
    let names: Vec<&String> = directions.keys().collect();
    let mut adjusted = Vec::with_capacity(candidates.len());
    for (i, cand) in candidates.iter().enumerate() {
        if cand.len() != names.len() || !names.iter().all(|n| cand.contains_key(*n)) {
            return Err(MemoryError::MetricMismatch(format!(
                "candidate {i} does not match the declared metric set"
            )));
        }
        adjusted.push(
            names
                .iter()
                .map(|n| directions[*n].sign() * cand[*n])
                .collect::<Vec<f64>>(),
        );
    }
    Ok(pareto_prune_adjusted(&adjusted))
}

/// Core non-dominated filter on maximize-everywhere vectors.
///
/// Candidates are scanned in descending component-sum order: a dominator's sum
/// is always at least its victim's, so only earlier entries in that order can
/// dominate, halving the comparisons versus the naive scan.
pub fn pareto_prune_adjusted(points: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let sa: f64 = points[a].iter().sum();
        let sb: f64 = points[b].iter().sum();
        sb.total_cmp(&sa).then(a.cmp(&b))
    });
    let mut survivors = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        let dominated = order[..pos]
            .iter()
            .any(|&j| dominates(&points[j], &points[i]));
        if !dominated {
            survivors.push(i);
        }
    }
    survivors.sort_unstable();
    survivors
}

/// a dominates b: a >= b everywhere and a > b somewhere.
fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

/// Greedy max-min-distance subset selection in z-scored metric space.
///
/// The seed is the highest-utility point (ties by lowest index); each further
/// pick maximizes the minimum Euclidean distance to the already-selected set
/// (ties by lowest index). Dimensions with zero spread contribute nothing, so
/// rescaling any one metric by a positive constant leaves the result
/// unchanged.
pub fn select_diverse(points: &[Vec<f64>], utilities: &[f64], k: usize) -> Vec<usize> {
    assert_eq!(points.len(), utilities.len());
    if points.is_empty() || k == 0 {
        return Vec::new();
    }
    let z = zscore(points);
    let n = z.len();

    let mut seed = 0;
    for i in 1..n {
        if utilities[i] > utilities[seed] {
            seed = i;
        }
    }
    let mut selected = vec![seed];
    let mut min_dist: Vec<f64> = (0..n).map(|i| euclid(&z[i], &z[seed])).collect();

    while selected.len() < k.min(n) {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if selected.contains(&i) {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) => {
                    if min_dist[i] > min_dist[b] {
                        best = Some(i);
                    }
                }
            }
        }
        let Some(pick) = best else { break };
        selected.push(pick);
        for i in 0..n {
            let d = euclid(&z[i], &z[pick]);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
    }
    selected
}

fn zscore(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len();
    let dims = points.first().map_or(0, |p| p.len());
    let mut means = vec![0.0; dims];
    for p in points {
        for (d, v) in p.iter().enumerate() {
            means[d] += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut stds = vec![0.0; dims];
    for p in points {
        for (d, v) in p.iter().enumerate() {
            stds[d] += (v - means[d]) * (v - means[d]);
        }
    }
    for s in &mut stds {
        *s = (*s / n as f64).sqrt();
    }
    points
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(d, v)| if stds[d] > 0.0 { (v - means[d]) / stds[d] } else { 0.0 })
                .collect()
        })
        .collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
