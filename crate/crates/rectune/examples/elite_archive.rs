//! Persists completed task records, then prunes memory into the elite
//! archive: feasible records only, Pareto-dominated ones dropped, the rest
//! diversity-selected down to capacity.

use chrono::{TimeZone, Utc};
use rectune::abtest::{MetricComparison, MetricReport};
use rectune::bench;
use rectune::memory::{MemoryStore, TaskRecord, TaskStatus};
use rectune::objective::CostCheck;
use rectune::simpipeline::Simulator;

fn report(e1: f64, e2: f64, div: f64) -> MetricReport {
    let mk = |t: f64| MetricComparison {
        control_mean: 1.0,
        treatment_mean: t,
        relative_delta_pct: Some(100.0 * (t - 1.0)),
        p_value: 0.01,
        significant: true,
    };
    MetricReport {
        metrics: [
            ("engagement1".to_string(), mk(e1)),
            ("engagement2".to_string(), mk(e2)),
            ("diversity".to_string(), mk(div)),
        ]
        .into_iter()
        .collect(),
    }
}

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let store = MemoryStore::open(dir.path().join("memory/planted")).expect("open");
    let skill = bench::planted_skill();
    let scenario = bench::planted_scenario();

    // four completed candidates: one dominated, one guardrail-infeasible
    let outcomes = [
        ("t1", 1.2, 1.1, 0.70), // solid
        ("t2", 1.1, 1.0, 0.69), // dominated by t1
        ("t3", 0.9, 1.3, 0.75), // different tradeoff, survives
        ("t4", 1.5, 1.5, 0.40), // breaches the diversity floor
    ];
    for (id, e1, e2, div) in outcomes {
        let mut rec = TaskRecord::new(
            id,
            &bench::initial_config(),
            "demo candidate",
            Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        );
        store.write_task(&rec).expect("write");
        store.update_task(id, |r| r.status = TaskStatus::Approved).unwrap();
        store.update_task(id, |r| r.status = TaskStatus::Running).unwrap();
        rec.results = Some(report(e1, e2, div));
        let results = rec.results.clone();
        store
            .update_task(id, move |r| {
                r.status = TaskStatus::Completed;
                r.results = results;
            })
            .unwrap();
    }

    let sim = Simulator::new(&scenario);
    let archive = store
        .prune_memory(10, &skill.north_star, |c| {
            sim.compute_cost(c).ok().map(|cost| CostCheck {
                cost,
                max_cost: scenario.max_cost,
            })
        })
        .expect("prune");

    println!("elite archive ({} of 4 candidates):", archive.entries.len());
    for e in &archive.entries {
        println!("  {}  utility {:+.3}", e.task_id, e.utility);
    }
    // t2 is dominated, t4 infeasible: only t1 and t3 survive
    let ids: Vec<&str> = archive.entries.iter().map(|e| e.task_id.as_str()).collect();
    assert_eq!(ids, vec!["t1", "t3"]);
    println!("\nhistory is append-only: {} records kept", store.list_tasks().unwrap().len());
}
