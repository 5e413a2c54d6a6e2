//! End-to-end optimization run: initialize a workdir for the planted
//! benchmark, run several loop rounds with the heuristic proposer, then
//! re-verify the archive's best config with a fresh experiment.

use rectune::bench;
use rectune::driver::{
    self, fixed_clock, init_workdir, run_loop, verify_best, LoopConfig, LoopHooks,
};

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let workdir = dir.path().join("run");
    init_workdir(
        &workdir,
        &bench::planted_skill(),
        &bench::planted_scenario(),
        false,
    )
    .expect("init");

    let mut config = LoopConfig::new(8, 4, 7);
    config.num_requests = bench::NUM_REQUESTS;
    config.experiment_seed = bench::EXPERIMENT_SEED;
    config.clock = fixed_clock(1_700_000_000, 60);
    let manifest = run_loop(&workdir, &config, &mut LoopHooks::default()).expect("loop");

    println!("round  arms  done  fail  rej  skill  best utility");
    for r in &manifest.rounds {
        println!(
            "{:5}  {:4}  {:4}  {:4}  {:3}  v{:<4}  {}",
            r.round,
            r.arm_count,
            r.completed,
            r.failed,
            r.rejected,
            r.skill_version,
            r.best_utility
                .map_or("-".to_string(), |u| format!("{u:.4}")),
        );
    }

    let skill = driver::load_latest_skill(&workdir, &manifest.skill_name).expect("skill");
    println!("\nfinal skill: {} v{}", skill.name, skill.version);
    for entry in &skill.domain_knowledge {
        println!("  learned: {}", entry.text);
    }

    let v = verify_best(&workdir, bench::NUM_REQUESTS, bench::EXPERIMENT_SEED)
        .expect("verify")
        .expect("archive nonempty");
    println!(
        "\nverified best {}: utility {:.4}, feasible {}",
        v.task_id, v.utility, v.feasible
    );
    println!("config: {}", v.config.canonical_string());
    assert!(v.feasible, "reported best must satisfy all constraints");
}
