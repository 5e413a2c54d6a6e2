//! Acceptance suite: one printed pass/fail line per criterion, exit 1 if any
//! fail. Runs without the libtest harness so the lines reach stdout in order.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::time::Instant;

use chrono::{TimeZone, Utc};
use rectune::abtest::{run_simulated_experiment, welch_p, ExperimentSpec, MetricComparison, MetricReport};
use rectune::agents::insight_self_learn;
use rectune::bench;
use rectune::driver::{
    fixed_clock, init_workdir, latest_skill_version, load_manifest, run_loop, save_manifest,
    verify_best, LoopConfig, LoopHooks, RunManifest,
};
use rectune::memory::{pareto_prune, select_diverse, MemoryStore, TaskRecord, TaskStatus};
use rectune::objective::{
    utility, CostCheck, Direction, Guardrail, NorthStar, PrimaryMetric,
};
use rectune::rng::{hash_str, StreamRng};
use rectune::simpipeline::{Simulator, SystemConfig};
use rectune::skillhub::{
    load_skill, save_skill, ParamKind, ParamScale, ParamSpec, Requirement, SearchSpace, Skill,
};
use tempfile::TempDir;

/// Grid-search oracle optimum over the 4096-point planted benchmark, frozen
/// from examples/grid_oracle.rs (num_requests 200, experiment seed 0).
const GRID_BEST_UTILITY: f64 = 4.375;

fn main() {
    // panic messages are reported on the criterion line; keep stderr quiet
    std::panic::set_hook(Box::new(|_| {}));
    let mut all_pass = true;

    all_pass &= criterion("AC-1 pareto oracle equivalence", ac1);
    all_pass &= criterion("AC-2 diversity greedy replay", ac2);
    all_pass &= criterion("AC-3 pipeline determinism and composition", ac3);
    all_pass &= criterion("AC-4 statistics fixtures", ac4);

    // AC-5 and AC-7 share the 20 benchmark runs
    let runs = catch(run_benchmark_loops);
    all_pass &= criterion("AC-5 optimization efficacy", || ac5(&runs));
    all_pass &= criterion("AC-6 actor-critic ablation", ac6);
    all_pass &= criterion("AC-7 guardrail respect", || ac7(&runs));
    all_pass &= criterion("AC-8 evolution safety", ac8);
    all_pass &= criterion("AC-9 persistence round-trips", ac9);

    if !all_pass {
        std::process::exit(1);
    }
}

fn criterion(label: &str, f: impl FnOnce()) -> bool {
    match catch(f) {
        Ok(()) => {
            println!("{label}: pass");
            true
        }
        Err(msg) => {
            println!("{label}: FAIL ({msg})");
            false
        }
    }
}

fn catch<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    std::panic::catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into())
    })
}

fn uniform_config(space: &SearchSpace, rng: &mut StreamRng) -> SystemConfig {
    SystemConfig {
        params: space
            .params
            .iter()
            .map(|(name, spec)| (name.clone(), spec.clip(rng.next_range(spec.lower, spec.upper))))
            .collect(),
    }
}

// AC-1: pareto_prune matches a brute-force O(n^2) dominance oracle on 1000
// random instances (n <= 50 candidates, J <= 4 metrics, mixed directions).
fn ac1() {
    let start = Instant::now();
    let metric_names = ["m0", "m1", "m2", "m3"];
    for instance in 0..1000u64 {
        let mut rng = StreamRng::from_parts(&[instance, hash_str("ac1")]);
        let n = 1 + rng.next_below(50) as usize;
        let j = 1 + rng.next_below(4) as usize;
        let directions: BTreeMap<String, Direction> = metric_names[..j]
            .iter()
            .map(|m| {
                let d = if rng.next_f64() < 0.5 {
                    Direction::Increase
                } else {
                    Direction::Decrease
                };
                (m.to_string(), d)
            })
            .collect();
        let mut candidates: Vec<BTreeMap<String, f64>> = (0..n)
            .map(|_| {
                metric_names[..j]
                    .iter()
                    .map(|m| (m.to_string(), rng.next_range(-1.0, 1.0)))
                    .collect()
            })
            .collect();
        // inject exact duplicates and shared coordinates to exercise ties
        for i in 1..n {
            if rng.next_f64() < 0.2 {
                let src = rng.next_below(i as u64) as usize;
                let copy = candidates[src].clone();
                candidates[i] = copy;
            }
        }

        let got = pareto_prune(&candidates, &directions).expect("well-formed instance");

        // oracle: i survives iff no j direction-adjusted-dominates it
        let adjusted: Vec<Vec<f64>> = candidates
            .iter()
            .map(|c| directions.iter().map(|(m, d)| d.sign() * c[m]).collect())
            .collect();
        let dominates = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
        };
        let want: Vec<usize> = (0..n)
            .filter(|&i| !(0..n).any(|j| j != i && dominates(&adjusted[j], &adjusted[i])))
            .collect();
        assert_eq!(got, want, "instance {instance} diverged from the oracle");
    }
    assert!(start.elapsed().as_secs_f64() < 5.0, "AC-1 exceeded 5 s");
}

// AC-2: each step of select_diverse attains the step-wise max-min distance
// (exhaustive per-step check) on 500 random instances; the selection is
// invariant under positive per-metric rescaling.
fn ac2() {
    let start = Instant::now();
    for instance in 0..500u64 {
        let mut rng = StreamRng::from_parts(&[instance, hash_str("ac2")]);
        let n = 1 + rng.next_below(30) as usize;
        let j = 1 + rng.next_below(4) as usize;
        let k = 1 + rng.next_below(10) as usize;
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..j).map(|_| rng.next_range(-5.0, 5.0)).collect())
            .collect();
        let utilities: Vec<f64> = (0..n).map(|_| rng.next_range(-1.0, 1.0)).collect();

        let picked = select_diverse(&points, &utilities, k);
        assert_eq!(picked.len(), k.min(n));
        assert_eq!(picked.iter().collect::<BTreeSet<_>>().len(), picked.len());

        // independent z-scoring (population std, zero-spread dims dropped)
        let z = oracle_zscore(&points);
        let dist = |a: usize, b: usize| -> f64 {
            z[a].iter()
                .zip(&z[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };

        // seed: highest utility, ties to the lowest index
        let seed = picked[0];
        for i in 0..n {
            assert!(
                utilities[i] < utilities[seed] || (utilities[i] == utilities[seed] && i >= seed),
                "instance {instance}: seed {seed} is not the first utility argmax"
            );
        }
        // each later pick: max-min distance to the already-selected prefix
        for step in 1..picked.len() {
            let prefix = &picked[..step];
            let min_d = |i: usize| {
                prefix
                    .iter()
                    .map(|&s| dist(i, s))
                    .fold(f64::INFINITY, f64::min)
            };
            let pick = picked[step];
            let dp = min_d(pick);
            for i in 0..n {
                if prefix.contains(&i) || i == pick {
                    continue;
                }
                let di = min_d(i);
                assert!(
                    di < dp || (di == dp && i >= pick),
                    "instance {instance} step {step}: {i} (min dist {di}) beats pick {pick} ({dp})"
                );
            }
        }

        // power-of-two rescaling is exact in binary floating point, so the
        // invariance must hold bitwise, not just approximately
        let mut scaled = points.clone();
        for d in 0..j {
            let factor = (2.0f64).powi(rng.next_below(7) as i32 - 3);
            for p in &mut scaled {
                p[d] *= factor;
            }
        }
        assert_eq!(
            select_diverse(&scaled, &utilities, k),
            picked,
            "instance {instance}: selection changed under per-metric rescaling"
        );
    }
    assert!(start.elapsed().as_secs_f64() < 5.0, "AC-2 exceeded 5 s");
}

fn oracle_zscore(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
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

// AC-3: run_system equals the explicit three-stage composition on 200 random
// (request, config) pairs; evaluation is bit-identical under 1 vs 8 workers.
fn ac3() {
    let scenario = bench::planted_scenario();
    let space = bench::planted_space();
    let sim = Simulator::new(&scenario);
    let mut rng = StreamRng::from_parts(&[hash_str("ac3")]);
    for _ in 0..200 {
        let request = sim.generate_request(rng.next_u64()).expect("request");
        let config = uniform_config(&space, &mut rng);
        let pre = sim.run_pre(&request, &config).expect("pre");
        let rank = sim.run_rank(&pre, &request, &config).expect("rank");
        let re = sim.run_re(&rank, &request, &config).expect("re");
        let composed = sim.run_system(&request, &config).expect("system");
        assert_eq!(composed, re, "run_system diverged from the composition");
    }

    let requests: Vec<_> = (0..200)
        .map(|i| sim.generate_request(i).expect("request"))
        .collect();
    let config = uniform_config(&space, &mut rng);
    let evaluate = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("pool")
            .install(|| {
                use rayon::prelude::*;
                requests
                    .par_iter()
                    .map(|r| sim.evaluate_on(r, &config))
                    .collect::<Result<Vec<_>, _>>()
                    .expect("evaluate")
            })
    };
    assert_eq!(evaluate(1), evaluate(8), "worker count changed the metrics");
}

// AC-4: the Welch fixture (0.5 vs 0.6, std 0.1, n = 100) and the paired-zero
// exactness rule.
fn ac4() {
    let (t, p) = welch_p(0.5, 0.1, 100, 0.6, 0.1, 100).expect("fixture");
    assert!((t - 7.071).abs() <= 0.001, "t = {t}");
    // high-precision oracle: p = erfc(5), computed independently at 50 digits
    let oracle = 1.537_459_794_428_035_1e-12;
    assert!(
        (p - oracle).abs() / oracle <= 0.10,
        "p = {p:e} beyond 10% of {oracle:e}"
    );

    let (t0, p0) = welch_p(0.5, 0.1, 100, 0.5, 0.1, 100).expect("identical");
    assert_eq!(t0, 0.0);
    assert_eq!(p0, 1.0);

    // end to end: an arm identical to control reports delta exactly 0, p = 1
    let scenario = bench::planted_scenario();
    let spec = ExperimentSpec {
        experiment_id: "ac4".into(),
        scenario: scenario.name.clone(),
        control: bench::initial_config(),
        arms: vec![("same".into(), bench::initial_config())],
        num_requests: 50,
        traffic_fraction: 1.0,
        seed: 0,
    };
    let outcomes = run_simulated_experiment(&spec, &scenario, &bench::planted_space()).expect("run");
    for cmp in outcomes["same"].report.metrics.values() {
        assert_eq!(cmp.relative_delta_pct, Some(0.0));
        assert_eq!(cmp.p_value, 1.0);
        assert!(!cmp.significant);
    }
}

struct LoopRun {
    _dir: TempDir,
    workdir: PathBuf,
    manifest: RunManifest,
    best_utility: f64,
    random_best: f64,
}

/// The 20 seeded benchmark runs shared by AC-5 and AC-7: the full loop at
/// R=20 x B=4 plus a uniform random search with the identical 80-experiment
/// budget and the same utility estimator.
fn run_benchmark_loops() -> (Vec<LoopRun>, f64) {
    let start = Instant::now();
    let runs: Vec<LoopRun> = (0..20u64)
        .map(|seed| {
            let dir = tempfile::tempdir().expect("tempdir");
            let workdir = dir.path().join("run");
            init_workdir(&workdir, &bench::planted_skill(), &bench::planted_scenario(), false)
                .expect("init");
            let mut config = LoopConfig::new(20, 4, seed);
            config.num_requests = bench::NUM_REQUESTS;
            config.experiment_seed = bench::EXPERIMENT_SEED;
            config.clock = fixed_clock(1_700_000_000, 1);
            let manifest =
                run_loop(&workdir, &config, &mut LoopHooks::default()).expect("loop");
            let best_utility = manifest
                .rounds
                .last()
                .and_then(|r| r.best_utility)
                .expect("nonempty archive");
            LoopRun {
                _dir: dir,
                workdir,
                manifest,
                best_utility,
                random_best: random_search_best(seed),
            }
        })
        .collect();
    (runs, start.elapsed().as_secs_f64())
}

fn random_search_best(seed: u64) -> f64 {
    let scenario = bench::planted_scenario();
    let space = bench::planted_space();
    let skill = bench::planted_skill();
    let mut rng = StreamRng::from_parts(&[seed, hash_str("uniform-random-search")]);
    let arms: Vec<(String, SystemConfig)> = (0..80)
        .map(|i| (format!("s{i:02}"), uniform_config(&space, &mut rng)))
        .collect();
    let spec = ExperimentSpec {
        experiment_id: format!("rs-{seed}"),
        scenario: scenario.name.clone(),
        control: bench::initial_config(),
        arms,
        num_requests: bench::NUM_REQUESTS,
        traffic_fraction: 1.0,
        seed: bench::EXPERIMENT_SEED,
    };
    let outcomes = run_simulated_experiment(&spec, &scenario, &space).expect("random search");
    let sim = Simulator::new(&scenario);
    spec.arms
        .iter()
        .map(|(name, config)| {
            let values: BTreeMap<String, f64> = outcomes[name]
                .treatment
                .metrics
                .iter()
                .map(|(k, v)| (k.clone(), v.mean))
                .collect();
            let cost = sim.compute_cost(config).ok().map(|cost| CostCheck {
                cost,
                max_cost: scenario.max_cost,
            });
            utility(&values, &skill.north_star, cost).expect("utility").value
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

// AC-5: every seed reaches >= 80% of the grid-search optimum, and the loop
// beats the equal-budget random search in >= 15 of 20 seeds (sign test
// p < 0.05 under the fair-coin null). Budget: < 10 minutes.
fn ac5(runs: &Result<(Vec<LoopRun>, f64), String>) {
    let (runs, elapsed) = match runs {
        Ok(r) => r,
        Err(e) => panic!("benchmark runs unavailable: {e}"),
    };
    let threshold = 0.8 * GRID_BEST_UTILITY;
    for (seed, run) in runs.iter().enumerate() {
        assert!(
            run.best_utility >= threshold,
            "seed {seed}: best {:.4} below {threshold:.4}",
            run.best_utility
        );
    }
    let wins = runs
        .iter()
        .filter(|r| r.best_utility > r.random_best)
        .count();
    assert!(wins >= 15, "loop beat random search in only {wins} of 20 seeds");
    assert!(*elapsed < 600.0, "benchmark runs took {elapsed:.0} s");
}

// AC-6: with 30% injected invalid proposals the critic rejects 100% of them
// and the critic-enabled loop wastes no experiment budget on invalid or
// duplicate configs; its final best utility is >= the critic-disabled loop's
// in >= 15 of 20 seeds.
fn ac6() {
    let seeds = 20u64;
    let mut wins = 0usize;
    for seed in 0..seeds {
        let mut best = [f64::NEG_INFINITY; 2];
        for (slot, critic_enabled) in [(0usize, true), (1usize, false)] {
            let injected: std::cell::RefCell<BTreeSet<(usize, usize)>> =
                std::cell::RefCell::new(BTreeSet::new());
            let dir = tempfile::tempdir().expect("tempdir");
            let workdir = dir.path().join("run");
            init_workdir(&workdir, &bench::planted_skill(), &bench::planted_scenario(), false)
                .expect("init");
            let mut config = LoopConfig::new(10, 4, seed);
            config.num_requests = bench::NUM_REQUESTS;
            config.experiment_seed = bench::EXPERIMENT_SEED;
            config.clock = fixed_clock(1_700_000_000, 1);
            config.critic_enabled = critic_enabled;
            let mut hooks = LoopHooks::default();
            hooks.mutate_proposals = Some(Box::new(|round, proposals| {
                for i in 0..proposals.len() {
                    let mut rng = StreamRng::from_parts(&[
                        seed,
                        round as u64,
                        i as u64,
                        hash_str("fault"),
                    ]);
                    if rng.next_f64() >= 0.3 {
                        continue;
                    }
                    match rng.next_below(3) {
                        // malformed: a parameter outside the schema
                        1 => {
                            proposals[i].config.params.insert("bogus".into(), 1.0);
                        }
                        // duplicate of the batch's first proposal as it now
                        // stands (itself possibly already made invalid)
                        2 if i > 0 => proposals[i].config = proposals[0].config.clone(),
                        // out of bounds
                        _ => {
                            proposals[i].config.params.insert("pre.w_pctr".into(), 99.0);
                        }
                    }
                    injected.borrow_mut().insert((round, i));
                }
            }));
            let manifest = run_loop(&workdir, &config, &mut hooks).expect("loop");
            drop(hooks);
            best[slot] = manifest
                .rounds
                .last()
                .and_then(|r| r.best_utility)
                .unwrap_or(f64::NEG_INFINITY);

            let injected = injected.into_inner();
            assert!(!injected.is_empty(), "fault injection never fired");
            if critic_enabled {
                let store =
                    MemoryStore::open(workdir.join("memory/planted")).expect("store");
                for &(round, i) in &injected {
                    let record = store
                        .read_task(&format!("r{round:03}-c{i}"))
                        .expect("record");
                    assert_eq!(
                        record.status,
                        TaskStatus::Rejected,
                        "critic passed injected proposal r{round:03}-c{i}"
                    );
                }
                let failed: usize = manifest.rounds.iter().map(|r| r.failed).sum();
                assert_eq!(failed, 0, "critic loop wasted budget on failing arms");
                let mut seen = BTreeSet::new();
                for record in store.list_tasks().expect("tasks") {
                    if record.status == TaskStatus::Completed {
                        assert!(
                            seen.insert(record.config.clone()),
                            "critic loop ran a duplicate config"
                        );
                    }
                }
            }
        }
        if best[0] >= best[1] {
            wins += 1;
        }
    }
    assert!(
        wins >= 15,
        "critic-enabled matched or beat critic-disabled in only {wins} of {seeds} seeds"
    );
}

// AC-7: across the AC-5 runs, the recommended best config's verification
// experiment satisfies every guardrail and the cost budget; no infeasible
// candidate is ever reported as best.
fn ac7(runs: &Result<(Vec<LoopRun>, f64), String>) {
    let (runs, _) = match runs {
        Ok(r) => r,
        Err(e) => panic!("benchmark runs unavailable: {e}"),
    };
    let scenario = bench::planted_scenario();
    let skill = bench::planted_skill();
    for (seed, run) in runs.iter().enumerate() {
        let v = verify_best(&run.workdir, bench::NUM_REQUESTS, bench::EXPERIMENT_SEED)
            .expect("verify")
            .expect("archive nonempty");
        assert!(v.feasible, "seed {seed}: best {} verified infeasible", v.task_id);
        let diversity = v.report.metrics["diversity"].treatment_mean;
        assert!(
            diversity >= bench::DIVERSITY_BASELINE,
            "seed {seed}: diversity {diversity} below the floor"
        );
        let sim = Simulator::new(&scenario);
        let cost = sim.compute_cost(&v.config).expect("cost");
        assert!(cost <= scenario.max_cost, "seed {seed}: cost {cost} over budget");
        assert_eq!(
            run.manifest.rounds.last().and_then(|r| r.best_task_id.clone()),
            Some(v.task_id.clone())
        );

        // the archive index itself never holds an infeasible candidate
        let store = MemoryStore::open(run.workdir.join("memory/planted")).expect("store");
        for entry in store.load_archive().expect("archive").entries {
            let config = SystemConfig::from_canonical(&entry.config).expect("config");
            assert!(sim.compute_cost(&config).expect("cost") <= scenario.max_cost);
            for g in &skill.north_star.guardrails {
                // adjusted metrics already carry the direction sign
                assert!(
                    entry.adjusted_metrics[&g.metric] >= g.direction.sign() * g.baseline,
                    "elite {} breaches guardrail {}",
                    entry.task_id,
                    g.metric
                );
            }
        }
    }
}

// AC-8: every evolved skill version keeps bounds(vN) within bounds(v1) with
// all elites inside, and the exact linear sensitivity fixture U = 2*dp1
// yields sensitivity(p1) = 1.0 +- 1e-9 with p2 undefined.
fn ac8() {
    // bounds safety over a real evolving run
    let dir = tempfile::tempdir().expect("tempdir");
    let workdir = dir.path().join("run");
    init_workdir(&workdir, &bench::planted_skill(), &bench::planted_scenario(), false)
        .expect("init");
    let mut config = LoopConfig::new(10, 4, 3);
    config.num_requests = bench::NUM_REQUESTS;
    config.experiment_seed = bench::EXPERIMENT_SEED;
    config.clock = fixed_clock(1_700_000_000, 1);
    run_loop(&workdir, &config, &mut LoopHooks::default()).expect("loop");

    let skills = workdir.join("skills");
    let latest = latest_skill_version(&workdir, "planted").expect("version");
    assert!(latest > 1, "no skill evolution happened in 10 rounds");
    let v1 = load_skill(&Skill::version_path(&skills, "planted", 1)).expect("v1");
    for version in 1..=latest {
        let skill = load_skill(&Skill::version_path(&skills, "planted", version)).expect("vN");
        assert_eq!(skill.version, version);
        for (name, spec) in &skill.requirement.search_space.params {
            let base = &v1.requirement.search_space.params[name];
            assert!(
                spec.lower >= base.lower && spec.upper <= base.upper && spec.lower < spec.upper,
                "v{version} bounds for {name} ([{}, {}]) escape v1 ([{}, {}])",
                spec.lower,
                spec.upper,
                base.lower,
                base.upper
            );
        }
    }
    let current = load_skill(&Skill::version_path(&skills, "planted", latest)).expect("latest");
    let store = MemoryStore::open(workdir.join("memory/planted")).expect("store");
    for entry in store.load_archive().expect("archive").entries {
        let config = SystemConfig::from_canonical(&entry.config).expect("config");
        for (name, spec) in &current.requirement.search_space.params {
            let v = config.params[name];
            assert!(
                v >= spec.lower && v <= spec.upper,
                "elite {} has {name} = {v} outside current bounds [{}, {}]",
                entry.task_id,
                spec.lower,
                spec.upper
            );
        }
    }

    // sensitivity fixture: utility delta exactly 2 * dp1, p2 never varies
    let fixture = sensitivity_fixture_skill();
    let now = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let records: Vec<TaskRecord> = (1..=5)
        .map(|i| {
            let p1 = i as f64 / 10.0;
            let config = SystemConfig::from_pairs([("p1", p1), ("p2", 0.5)]);
            let mut record = TaskRecord::new(format!("f{i}"), &config, "fixture", now);
            record.status = TaskStatus::Completed;
            record.results = Some(MetricReport {
                metrics: [(
                    "m".to_string(),
                    MetricComparison {
                        control_mean: 1.0,
                        treatment_mean: 1.0 + 2.0 * p1,
                        relative_delta_pct: Some(200.0 * p1),
                        p_value: 0.001,
                        significant: true,
                    },
                )]
                .into_iter()
                .collect(),
            });
            record
        })
        .collect();
    let report = insight_self_learn(&records, &fixture, now);
    let p1 = &report.params["p1"];
    let s = p1.sensitivity.expect("p1 sensitivity defined");
    assert!((s - 1.0).abs() <= 1e-9, "sensitivity(p1) = {s}");
    assert_eq!(p1.trend, 1);
    assert_eq!(report.params["p2"].sensitivity, None, "p2 must stay undefined");
}

fn sensitivity_fixture_skill() -> Skill {
    let cont = |lower: f64, upper: f64| ParamSpec {
        lower,
        upper,
        kind: ParamKind::Continuous,
        scale: ParamScale::Linear,
        sensitive: false,
    };
    Skill {
        name: "fixture".into(),
        version: 1,
        task_context: "sensitivity fixture".into(),
        requirement: Requirement {
            search_space: SearchSpace {
                params: [
                    ("p1".to_string(), cont(0.0, 1.0)),
                    ("p2".to_string(), cont(0.0, 1.0)),
                ]
                .into_iter()
                .collect(),
            },
            output_schema: "config-batch-v1".into(),
            infra_constraints: String::new(),
        },
        north_star: NorthStar {
            primary: vec![PrimaryMetric {
                metric: "m".into(),
                direction: Direction::Increase,
            }],
            guardrails: Vec::<Guardrail>::new(),
        },
        initial_config: SystemConfig::from_pairs([("p1", 0.0), ("p2", 0.5)]),
        domain_knowledge: vec![],
        tools: vec![],
    }
}

// AC-9: skills, task records, reports, and manifests reload equal to what was
// saved under an injected deterministic clock; a crash between temp write and
// rename never corrupts the store.
fn ac9() {
    let small_run = |seed: u64| -> (TempDir, PathBuf) {
        let dir = tempfile::tempdir().expect("tempdir");
        let workdir = dir.path().join("run");
        init_workdir(&workdir, &bench::planted_skill(), &bench::planted_scenario(), false)
            .expect("init");
        let mut config = LoopConfig::new(5, 4, seed);
        config.num_requests = 100;
        config.experiment_seed = bench::EXPERIMENT_SEED;
        config.clock = fixed_clock(1_700_000_000, 1);
        run_loop(&workdir, &config, &mut LoopHooks::default()).expect("loop");
        (dir, workdir)
    };
    let (_d1, run1) = small_run(11);
    let (_d2, run2) = small_run(11);

    // golden determinism: identical seeds and clocks give identical bytes
    let files = |root: &PathBuf| -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![root.clone()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).expect("read_dir") {
                let path = entry.expect("entry").path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                    out.push((rel, std::fs::read(&path).expect("read")));
                }
            }
        }
        out.sort();
        out
    };
    assert_eq!(files(&run1), files(&run2), "reruns are not byte-identical");

    // task records (with their embedded experiment reports) reload and
    // re-serialize to the exact bytes on disk
    let tasks_dir = run1.join("memory/planted/tasks");
    let mut checked = 0;
    for entry in std::fs::read_dir(&tasks_dir).expect("tasks") {
        let path = entry.expect("entry").path();
        let text = std::fs::read_to_string(&path).expect("read");
        let record: TaskRecord = serde_json::from_str(&text).expect("parse");
        let mut rewritten = serde_json::to_string_pretty(&record).expect("serialize");
        rewritten.push('\n');
        assert_eq!(rewritten, text, "{} does not round-trip", path.display());
        checked += 1;
    }
    assert!(checked > 0);

    // skill files
    let latest = latest_skill_version(&run1, "planted").expect("version");
    for version in 1..=latest {
        let path = Skill::version_path(&run1.join("skills"), "planted", version);
        let skill = load_skill(&path).expect("load");
        let copy = run1.join(format!("skill-copy-v{version}.json"));
        save_skill(&skill, &copy).expect("save");
        assert_eq!(
            std::fs::read(&path).expect("read"),
            std::fs::read(&copy).expect("read copy"),
            "skill v{version} does not round-trip"
        );
    }

    // manifest: load, save back, reload; bytes and structure both stable
    let manifest_path = run1.join("manifest.json");
    let before = std::fs::read(&manifest_path).expect("manifest");
    let manifest = load_manifest(&run1).expect("load");
    save_manifest(&run1, &manifest).expect("save");
    assert_eq!(before, std::fs::read(&manifest_path).expect("manifest"));
    assert_eq!(manifest, load_manifest(&run1).expect("reload"));

    // crash injection: leftover temp files from an interrupted atomic write
    // must never corrupt reads
    let store_dir = run1.join("memory/planted");
    let store = MemoryStore::open(&store_dir).expect("store");
    let tasks_before = store.list_tasks().expect("tasks");
    let archive_before = store.load_archive().expect("archive");
    std::fs::write(
        store_dir.join("tasks/.r000-c0.json.tmp-9999"),
        b"{\"id\": \"r000-c0\", \"status\"",
    )
    .expect("write tmp");
    std::fs::write(store_dir.join(".elites.json.tmp-9999"), b"{\"entries").expect("write tmp");
    assert_eq!(store.list_tasks().expect("tasks"), tasks_before);
    assert_eq!(store.load_archive().expect("archive"), archive_before);
    let first = &tasks_before[0];
    assert_eq!(&store.read_task(&first.id).expect("read"), first);
}
