//! Operator command-line surface.
//!
//! `init` lays out a workdir, `loop` runs optimization rounds with the human
//! review gate, `report` renders results, and the thin wrappers (`propose`,
//! `critique`, `run`, `collect`, `insight`, `evolve`) expose each agent step
//! individually. Exit codes: 0 success, 1 validation error, 2 runtime error,
//! 130 interrupt.

use crate::abtest::SimulatedPlatform;
use crate::agents::{self, EliteSnapshot, ExperimentParams, ProposedCandidate, ProposerBackend};
use crate::driver::{
    self, fixed_clock, ClockSpec, DriverError, LoopConfig, LoopHooks, ReviewDecision,
};
use crate::llmclient::EndpointConfig;
use crate::memory::{atomic_write, MemoryStore};
use crate::scenario::Scenario;
use crate::simpipeline::Simulator;
use crate::skillhub::{load_skill, save_skill, Skill};
use clap::{Parser, Subcommand, ValueEnum};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_INTERRUPT: i32 = 130;

#[derive(Parser)]
#[command(
    name = "rectune",
    version,
    about = "Agentic configuration tuning for multi-stage ranking pipelines"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProposerArg {
    Heuristic,
    Llm,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Md,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Create a workdir skeleton from a skill and a scenario file.
    Init {
        #[arg(long)]
        workdir: PathBuf,
        #[arg(long)]
        skill: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Overwrite an already-initialized workdir.
        #[arg(long)]
        force: bool,
    },
    /// Run optimization rounds (propose, review, experiment, learn, evolve).
    Loop {
        #[arg(long)]
        workdir: PathBuf,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, value_enum, default_value_t = ProposerArg::Heuristic)]
        proposer: ProposerArg,
        /// Skip the interactive review gate.
        #[arg(long)]
        auto_approve: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        num_requests: u64,
        /// Disable the critic filter (ablation).
        #[arg(long)]
        no_critic: bool,
        /// Deterministic clock `<start_epoch_secs>:<step_secs>` for
        /// reproducible timestamps.
        #[arg(long)]
        fixed_clock: Option<String>,
    },
    /// Render the run history as markdown or RFC-4180 CSV.
    Report {
        #[arg(long)]
        workdir: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Md)]
        format: FormatArg,
    },
    /// Print a batch of actor proposals without recording them.
    Propose {
        #[arg(long)]
        workdir: PathBuf,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ProposerArg::Heuristic)]
        proposer: ProposerArg,
    },
    /// Review a JSON array of proposals (file or stdin) against the skill.
    Critique {
        #[arg(long)]
        workdir: PathBuf,
        /// Path to a proposals JSON file; stdin when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        keep: usize,
    },
    /// Record proposals as tasks and schedule their experiment.
    Run {
        #[arg(long)]
        workdir: PathBuf,
        /// Task ids of Proposed records to launch.
        task_ids: Vec<String>,
        #[arg(long, default_value_t = 400)]
        num_requests: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        auto_approve: bool,
    },
    /// Collect a scheduled experiment's results into memory.
    Collect {
        #[arg(long)]
        workdir: PathBuf,
        handle: String,
    },
    /// Learn parameter sensitivities from completed history.
    Insight {
        #[arg(long)]
        workdir: PathBuf,
    },
    /// Evolve the skill one version from the latest insight report.
    Evolve {
        #[arg(long)]
        workdir: PathBuf,
    },
}

fn exit_code(err: &DriverError) -> i32 {
    match err {
        DriverError::Interrupted => EXIT_INTERRUPT,
        DriverError::Scenario(_)
        | DriverError::Skill(_)
        | DriverError::NotInitialized(..)
        | DriverError::AlreadyInitialized(_)
        | DriverError::ReviewUnavailable => EXIT_VALIDATION,
        DriverError::Io(_)
        | DriverError::Json(_)
        | DriverError::Memory(_)
        | DriverError::Agent(_)
        | DriverError::Abtest(_) => EXIT_RUNTIME,
    }
}

fn parse_fixed_clock(s: &str) -> Result<ClockSpec, DriverError> {
    let (start, step) = s.split_once(':').ok_or_else(|| {
        DriverError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "expected <start_epoch_secs>:<step_secs>",
        ))
    })?;
    let parse = |v: &str| {
        v.parse::<i64>().map_err(|e| {
            DriverError::Io(std::io::Error::new(std::io::ErrorKind::InvalidInput, e))
        })
    };
    Ok(fixed_clock(parse(start)?, parse(step)?))
}

fn backend_for(arg: ProposerArg) -> Result<ProposerBackend, DriverError> {
    match arg {
        ProposerArg::Heuristic => Ok(ProposerBackend::Heuristic),
        ProposerArg::Llm => EndpointConfig::from_env()
            .map(ProposerBackend::Llm)
            .ok_or_else(|| {
                DriverError::Skill(crate::skillhub::SkillError::Invalid {
                    field: "proposer".into(),
                    message: "llm proposer needs RECTUNE_LLM_URL (and optionally \
RECTUNE_LLM_API_KEY, RECTUNE_LLM_MODEL) in the environment"
                        .into(),
                })
            }),
    }
}

/// Interactive gate: prompt on a TTY, fail closed otherwise.
fn review_gate(auto_approve: bool) -> impl FnMut(&crate::abtest::ExperimentSpec) -> ReviewDecision {
    move |spec| {
        if auto_approve {
            return ReviewDecision::Approve;
        }
        if unsafe { libc::isatty(0) } != 1 {
            return ReviewDecision::Unavailable;
        }
        eprint!(
            "launch experiment `{}` with {} arm(s) on {} requests? [y/N] ",
            spec.experiment_id,
            spec.arms.len(),
            spec.num_requests
        );
        let mut line = String::new();
        if std::io::stdin().lock().read_line(&mut line).is_err() {
            return ReviewDecision::Unavailable;
        }
        if line.trim().eq_ignore_ascii_case("y") {
            ReviewDecision::Approve
        } else {
            ReviewDecision::Decline
        }
    }
}

fn open_store(workdir: &Path, skill_name: &str) -> Result<MemoryStore, DriverError> {
    Ok(MemoryStore::open(workdir.join("memory").join(skill_name))?)
}

fn elites_snapshot(store: &MemoryStore) -> Result<Vec<EliteSnapshot>, DriverError> {
    let archive = store.load_archive()?;
    Ok(archive
        .entries
        .iter()
        .filter_map(|e| {
            store.read_task(&e.task_id).ok().map(|record| EliteSnapshot {
                record,
                utility: e.utility,
            })
        })
        .collect())
}

fn experiments_dir(workdir: &Path) -> PathBuf {
    workdir.join("experiments")
}

fn cmd_init(workdir: &Path, skill: &Path, scenario: &Path, force: bool) -> Result<(), DriverError> {
    let skill = load_skill(skill)?;
    let scenario = Scenario::load(scenario)?;
    driver::init_workdir(workdir, &skill, &scenario, force)?;
    println!("initialized {}", workdir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_loop(
    workdir: &Path,
    rounds: usize,
    batch: usize,
    proposer: ProposerArg,
    auto_approve: bool,
    seed: u64,
    num_requests: u64,
    no_critic: bool,
    fixed: Option<&str>,
) -> Result<(), DriverError> {
    let mut config = LoopConfig::new(rounds, batch, seed);
    config.proposer = backend_for(proposer)?;
    config.critic_enabled = !no_critic;
    config.num_requests = num_requests;
    if let Some(s) = fixed {
        config.clock = parse_fixed_clock(s)?;
    }
    let mut hooks = LoopHooks {
        review: Box::new(review_gate(auto_approve)),
        mutate_proposals: None,
    };
    let manifest = driver::run_loop(workdir, &config, &mut hooks)?;
    for round in manifest.rounds.iter().rev().take(rounds).rev() {
        match (&round.best_utility, &round.best_task_id) {
            (Some(u), Some(id)) => println!(
                "round {}: {} completed, {} failed, {} rejected; best {id} utility {u:.6}",
                round.round, round.completed, round.failed, round.rejected
            ),
            _ => println!(
                "round {}: {} completed, {} failed, {} rejected; no feasible elite yet",
                round.round, round.completed, round.failed, round.rejected
            ),
        }
    }
    Ok(())
}

/// Per-round rows plus the elite dump, shared by both report formats so they
/// agree numerically by construction.
struct ReportData {
    rows: Vec<ReportRow>,
    elites: Vec<(String, String, f64)>,
}

struct ReportRow {
    round: usize,
    best_utility: Option<f64>,
    best_task: Option<String>,
    /// (metric, delta_pct, p_value, significant) from the best task's report.
    metrics: Vec<(String, Option<f64>, f64, bool)>,
}

fn report_data(workdir: &Path) -> Result<ReportData, DriverError> {
    let manifest = driver::load_manifest(workdir)?;
    let store = open_store(workdir, &manifest.skill_name)?;
    let mut rows = Vec::new();
    for round in &manifest.rounds {
        let mut metrics = Vec::new();
        if let Some(id) = &round.best_task_id {
            if let Ok(record) = store.read_task(id) {
                if let Some(report) = record.results {
                    for (name, cmp) in report.metrics {
                        metrics.push((name, cmp.relative_delta_pct, cmp.p_value, cmp.significant));
                    }
                }
            }
        }
        rows.push(ReportRow {
            round: round.round,
            best_utility: round.best_utility,
            best_task: round.best_task_id.clone(),
            metrics,
        });
    }
    let archive = store.load_archive()?;
    let elites = archive
        .entries
        .iter()
        .map(|e| (e.task_id.clone(), e.config.clone(), e.utility))
        .collect();
    Ok(ReportData { rows, elites })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("undefined".to_string(), |x| format!("{x:.6}"))
}

pub fn render_report_md(workdir: &Path) -> Result<String, DriverError> {
    let data = report_data(workdir)?;
    if data.rows.is_empty() {
        return Ok("no completed rounds yet\n".to_string());
    }
    let mut out = String::new();
    out.push_str("# Run Report\n\n## Rounds\n\n");
    out.push_str("| round | best task | best utility | metric | delta % | p-value | significant |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for row in &data.rows {
        if row.metrics.is_empty() {
            out.push_str(&format!(
                "| {} | {} | {} | - | - | - | - |\n",
                row.round,
                row.best_task.as_deref().unwrap_or("-"),
                fmt_opt(row.best_utility),
            ));
        }
        for (metric, delta, p, sig) in &row.metrics {
            out.push_str(&format!(
                "| {} | {} | {} | {metric} | {} | {p:.6} | {sig} |\n",
                row.round,
                row.best_task.as_deref().unwrap_or("-"),
                fmt_opt(row.best_utility),
                fmt_opt(*delta),
            ));
        }
    }
    out.push_str("\n## Elite Archive\n\n| task | utility | config |\n|---|---|---|\n");
    for (task, config, utility) in &data.elites {
        out.push_str(&format!("| {task} | {utility:.6} | `{config}` |\n"));
    }
    Ok(out)
}

pub fn render_report_csv(workdir: &Path) -> Result<String, DriverError> {
    let data = report_data(workdir)?;
    if data.rows.is_empty() {
        return Ok(String::new());
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record([
            "section", "round", "task", "utility", "metric", "delta_pct", "p_value",
            "significant",
        ])
        .map_err(csv_err)?;
    for row in &data.rows {
        let base = [
            "round".to_string(),
            row.round.to_string(),
            row.best_task.clone().unwrap_or_default(),
            fmt_opt(row.best_utility),
        ];
        if row.metrics.is_empty() {
            let mut rec = base.to_vec();
            rec.extend(["".into(), "".into(), "".into(), "".into()]);
            writer.write_record(&rec).map_err(csv_err)?;
        }
        for (metric, delta, p, sig) in &row.metrics {
            let mut rec = base.to_vec();
            rec.extend([
                metric.clone(),
                fmt_opt(*delta),
                format!("{p:.6}"),
                sig.to_string(),
            ]);
            writer.write_record(&rec).map_err(csv_err)?;
        }
    }
    for (task, config, utility) in &data.elites {
        writer
            .write_record([
                "elite",
                "",
                task,
                &format!("{utility:.6}"),
                "",
                "",
                "",
                config,
            ])
            .map_err(csv_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| {
        DriverError::Io(std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
    })?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn csv_err(e: csv::Error) -> DriverError {
    DriverError::Io(std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
}

fn cmd_report(workdir: &Path, format: FormatArg) -> Result<(), DriverError> {
    let (name, content) = match format {
        FormatArg::Md => ("report.md", render_report_md(workdir)?),
        FormatArg::Csv => ("report.csv", render_report_csv(workdir)?),
    };
    if content.is_empty() || content.starts_with("no completed rounds") {
        println!("no completed rounds yet; nothing to report");
        return Ok(());
    }
    let path = workdir.join("reports").join(name);
    atomic_write(&path, content.as_bytes())?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_propose(
    workdir: &Path,
    batch: usize,
    seed: u64,
    proposer: ProposerArg,
) -> Result<(), DriverError> {
    let manifest = driver::load_manifest(workdir)?;
    let skill = driver::load_latest_skill(workdir, &manifest.skill_name)?;
    let store = open_store(workdir, &manifest.skill_name)?;
    let elites = elites_snapshot(&store)?;
    let backend = backend_for(proposer)?;
    let proposals = agents::actor_propose(&skill, &elites, batch, &backend, seed)?;
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &proposals)?;
    writeln!(stdout)?;
    Ok(())
}

fn cmd_critique(workdir: &Path, input: Option<&Path>, keep: usize) -> Result<(), DriverError> {
    let manifest = driver::load_manifest(workdir)?;
    let skill = driver::load_latest_skill(workdir, &manifest.skill_name)?;
    let text = match input {
        Some(path) => std::fs::read_to_string(path)?,
        None => {
            let mut buf = String::new();
            std::io::Read::read_to_string(&mut std::io::stdin().lock(), &mut buf)?;
            buf
        }
    };
    let proposals: Vec<ProposedCandidate> = serde_json::from_str(&text)?;
    let store = open_store(workdir, &manifest.skill_name)?;
    let history = store.list_tasks()?;
    let archive = store.load_archive()?;
    let verdict = agents::critic_review(&proposals, &skill, &history, &archive, keep);
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &verdict)?;
    writeln!(stdout)?;
    Ok(())
}

fn cmd_run(
    workdir: &Path,
    task_ids: &[String],
    num_requests: u64,
    seed: u64,
    auto_approve: bool,
) -> Result<(), DriverError> {
    let manifest = driver::load_manifest(workdir)?;
    let skill = driver::load_latest_skill(workdir, &manifest.skill_name)?;
    let scenario = driver::load_scenario(workdir)?;
    let store = open_store(workdir, &manifest.skill_name)?;
    let params = ExperimentParams {
        experiment_id: format!("manual-{seed}"),
        num_requests,
        traffic_fraction: 0.1,
        seed,
    };
    let spec = agents::online_prepare(task_ids, &skill, &store, &scenario.name, &params)?;
    match review_gate(auto_approve)(&spec) {
        ReviewDecision::Unavailable => return Err(DriverError::ReviewUnavailable),
        ReviewDecision::Decline => {
            agents::online_decline(task_ids, &store, "operator declined the experiment")?;
            println!("declined; records rejected");
            return Ok(());
        }
        ReviewDecision::Approve => {}
    }
    // the platform lives in-process, so the spec persists for `collect` to
    // re-execute deterministically in a later invocation
    let handle = format!("manual-{seed}-{}", task_ids.join("-"));
    let mut json = serde_json::to_string_pretty(&spec)?;
    json.push('\n');
    atomic_write(&experiments_dir(workdir).join(format!("{handle}.json")), json.as_bytes())?;
    for id in task_ids {
        store.update_task(id, |r| r.status = crate::memory::TaskStatus::Running)?;
    }
    println!("{handle}");
    Ok(())
}

fn cmd_collect(workdir: &Path, handle: &str) -> Result<(), DriverError> {
    let manifest = driver::load_manifest(workdir)?;
    let skill = driver::load_latest_skill(workdir, &manifest.skill_name)?;
    let v1 = load_skill(&Skill::version_path(
        &workdir.join("skills"),
        &manifest.skill_name,
        1,
    ))?;
    let scenario = driver::load_scenario(workdir)?;
    let spec_path = experiments_dir(workdir).join(format!("{handle}.json"));
    if !spec_path.exists() {
        return Err(DriverError::Abtest(crate::abtest::AbtestError::UnknownHandle(
            handle.to_string(),
        )));
    }
    let spec: crate::abtest::ExperimentSpec =
        serde_json::from_str(&std::fs::read_to_string(&spec_path)?)?;
    let store = open_store(workdir, &manifest.skill_name)?;
    let platform = SimulatedPlatform::new(scenario.clone(), v1.requirement.search_space.clone());
    let platform_handle = crate::abtest::ExperimentPlatform::submit(&platform, &spec)?;
    crate::abtest::ExperimentPlatform::status(&platform, &platform_handle)?;
    let updated = agents::online_collect(&platform, &platform_handle, &spec, &store)?;
    let sim = Simulator::new(&scenario);
    store.prune_memory(10, &skill.north_star, |c| {
        sim.compute_cost(c).ok().map(|cost| crate::objective::CostCheck {
            cost,
            max_cost: scenario.max_cost,
        })
    })?;
    for record in updated {
        println!("{}: {:?}", record.id, record.status);
    }
    Ok(())
}

fn cmd_insight(workdir: &Path) -> Result<(), DriverError> {
    let manifest = driver::load_manifest(workdir)?;
    let skill = driver::load_latest_skill(workdir, &manifest.skill_name)?;
    let store = open_store(workdir, &manifest.skill_name)?;
    let records = store.list_tasks()?;
    let report = agents::insight_self_learn(&records, &skill, chrono::Utc::now());
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    atomic_write(&store.insights_path(), json.as_bytes())?;
    println!("{}", store.insights_path().display());
    Ok(())
}

fn cmd_evolve(workdir: &Path) -> Result<(), DriverError> {
    let manifest = driver::load_manifest(workdir)?;
    let skill = driver::load_latest_skill(workdir, &manifest.skill_name)?;
    let v1 = load_skill(&Skill::version_path(
        &workdir.join("skills"),
        &manifest.skill_name,
        1,
    ))?;
    let store = open_store(workdir, &manifest.skill_name)?;
    let records = store.list_tasks()?;
    let report = agents::insight_self_learn(&records, &skill, chrono::Utc::now());
    let archive = store.load_archive()?;
    let next = agents::skill_evolve(
        &skill,
        &report,
        &records,
        &archive,
        &v1.requirement.search_space,
        chrono::Utc::now(),
    )?;
    let path = Skill::version_path(&workdir.join("skills"), &next.name, next.version);
    save_skill(&next, &path)?;
    println!("{}", path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), DriverError> {
    match cli.command {
        Command::Init {
            workdir,
            skill,
            scenario,
            force,
        } => cmd_init(&workdir, &skill, &scenario, force),
        Command::Loop {
            workdir,
            rounds,
            batch,
            proposer,
            auto_approve,
            seed,
            num_requests,
            no_critic,
            fixed_clock,
        } => cmd_loop(
            &workdir,
            rounds,
            batch,
            proposer,
            auto_approve,
            seed,
            num_requests,
            no_critic,
            fixed_clock.as_deref(),
        ),
        Command::Report { workdir, format } => cmd_report(&workdir, format),
        Command::Propose {
            workdir,
            batch,
            seed,
            proposer,
        } => cmd_propose(&workdir, batch, seed, proposer),
        Command::Critique {
            workdir,
            input,
            keep,
        } => cmd_critique(&workdir, input.as_deref(), keep),
        Command::Run {
            workdir,
            task_ids,
            num_requests,
            seed,
            auto_approve,
        } => cmd_run(&workdir, &task_ids, num_requests, seed, auto_approve),
        Command::Collect { workdir, handle } => cmd_collect(&workdir, &handle),
        Command::Insight { workdir } => cmd_insight(&workdir),
        Command::Evolve { workdir } => cmd_evolve(&workdir),
    }
}

/// Binary entry point; returns the process exit code.
pub fn main_entry() -> i32 {
    driver::install_sigint_handler();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
