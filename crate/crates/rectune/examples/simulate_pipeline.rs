//! Walks one request through the three pipeline stages and shows the
//! simulated user feedback and per-request metrics.

use rectune::bench;
use rectune::simpipeline::Simulator;

fn main() {
    let scenario = bench::planted_scenario();
    let config = bench::initial_config();
    let sim = Simulator::new(&scenario);
    let request = sim.generate_request(0).expect("request");

    let c1 = sim.run_pre(&request, &config).expect("pre");
    let c2 = sim.run_rank(&c1, &request, &config).expect("rank");
    let c3 = sim.run_re(&c2, &request, &config).expect("re");
    println!(
        "pool {} -> pre {} -> rank {} -> re {}",
        scenario.pool_size,
        c1.entries.len(),
        c2.entries.len(),
        c3.entries.len()
    );
    println!("final list (item, adjusted score):");
    for (id, score) in &c3.entries {
        println!("  item {id:3}  {score:+.4}");
    }

    // the composite must equal the explicit three-stage run
    let composed = sim.run_system(&request, &config).expect("system");
    assert_eq!(composed, c3);

    let feedback = sim.simulate_feedback(&request, &c3).expect("feedback");
    println!("\nfeedback:");
    for o in &feedback.outcomes {
        println!(
            "  item {:3}  clicked={} hearted={}",
            o.item_id, o.clicked, o.hearted
        );
    }

    let metrics = sim.evaluate_on(&request, &config).expect("metrics");
    println!("\nper-request metrics:");
    for (name, value) in &metrics.values {
        println!("  {name}: {value:.4}");
    }
    let outcome = sim
        .utility_of(&metrics, &config, &bench::planted_skill().north_star)
        .expect("utility");
    println!(
        "\nutility {:.4} (feasible: {})",
        outcome.value, outcome.feasible
    );
}
