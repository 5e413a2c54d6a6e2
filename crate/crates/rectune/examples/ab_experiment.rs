//! Runs a paired simulated A/B experiment: two treatment arms against the
//! initial config as control, with common random numbers per request.

use rectune::abtest::{ExperimentPlatform, ExperimentSpec, ExperimentStatus, SimulatedPlatform};
use rectune::bench;

fn main() {
    let scenario = bench::planted_scenario();
    let space = bench::planted_space();
    let platform = SimulatedPlatform::new(scenario, space);

    let mut aggressive = bench::initial_config();
    aggressive.params.insert("rank.w_ctr".into(), 2.0);
    aggressive.params.insert("rank.w_heart".into(), 0.5);
    let mut diverse = bench::initial_config();
    diverse.params.insert("re.diversity_penalty".into(), 1.0);
    diverse.params.insert("re.topic_cap".into(), 1.0);

    let spec = ExperimentSpec {
        experiment_id: "demo".into(),
        scenario: "planted".into(),
        control: bench::initial_config(),
        arms: vec![
            ("aggressive".into(), aggressive),
            ("diverse".into(), diverse),
        ],
        num_requests: bench::NUM_REQUESTS,
        traffic_fraction: 0.1,
        seed: bench::EXPERIMENT_SEED,
    };

    let handle = platform.submit(&spec).expect("submit");
    assert_eq!(platform.status(&handle).expect("status"), ExperimentStatus::Done);
    let reports = platform.fetch(&handle).expect("fetch");

    for (arm, report) in reports {
        println!("arm `{arm}`:");
        for (metric, cmp) in &report.metrics {
            let delta = cmp
                .relative_delta_pct
                .map_or("undefined".to_string(), |d| format!("{d:+.2}%"));
            println!(
                "  {metric:12} control {:.4}  treatment {:.4}  delta {delta:>10}  p={:.4}{}",
                cmp.control_mean,
                cmp.treatment_mean,
                cmp.p_value,
                if cmp.significant { "  *" } else { "" }
            );
        }
    }
}
