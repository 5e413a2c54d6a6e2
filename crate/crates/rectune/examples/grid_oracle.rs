//! Exhaustive grid search over the planted benchmark.
//!
//! Evaluates all 4096 grid configurations on the shared request pool, prints
//! the best feasible utility and config, and summarizes how often the cost
//! budget and the diversity guardrail rule configs out. This is the oracle
//! the optimization loop is measured against.

use rayon::prelude::*;
use rectune::bench;
use rectune::objective::{utility, CostCheck};
use rectune::rng::derive_key;
use rectune::simpipeline::Simulator;

fn main() {
    let scenario = bench::planted_scenario();
    let skill = bench::planted_skill();
    let stream_seed = derive_key(&[scenario.seed, bench::EXPERIMENT_SEED]);
    let sim = Simulator::new(&scenario).with_stream_seed(stream_seed);
    let requests: Vec<_> = (0..bench::NUM_REQUESTS)
        .map(|id| sim.generate_request(id).expect("request"))
        .collect();

    let configs = bench::grid_configs();
    let start = std::time::Instant::now();
    let evaluated: Vec<(usize, f64, f64, bool)> = configs
        .par_iter()
        .enumerate()
        .map(|(i, config)| {
            let mut sums = std::collections::BTreeMap::new();
            for req in &requests {
                let m = sim.evaluate_on(req, config).expect("evaluate");
                for (k, v) in m.values {
                    *sums.entry(k).or_insert(0.0) += v;
                }
            }
            let means: std::collections::BTreeMap<String, f64> = sums
                .into_iter()
                .map(|(k, v)| (k, v / requests.len() as f64))
                .collect();
            let cost = sim.compute_cost(config).expect("cost");
            let outcome = utility(
                &means,
                &skill.north_star,
                Some(CostCheck {
                    cost,
                    max_cost: scenario.max_cost,
                }),
            )
            .expect("utility");
            let diversity = means["diversity"];
            (i, outcome.value, diversity, cost > scenario.max_cost)
        })
        .collect();
    let elapsed = start.elapsed();

    let feasible: Vec<&(usize, f64, f64, bool)> =
        evaluated.iter().filter(|(_, u, _, _)| u.is_finite()).collect();
    let over_cost = evaluated.iter().filter(|(_, _, _, oc)| *oc).count();
    let guard_breaches = evaluated
        .iter()
        .filter(|(_, _, d, oc)| !*oc && *d < bench::DIVERSITY_BASELINE)
        .count();
    let best = feasible
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one feasible config");

    let mut diversities: Vec<f64> = evaluated.iter().map(|(_, _, d, _)| *d).collect();
    diversities.sort_by(f64::total_cmp);
    let pct = |p: f64| diversities[((diversities.len() - 1) as f64 * p) as usize];

    println!("grid points:        {}", evaluated.len());
    println!("feasible:           {}", feasible.len());
    println!("over cost budget:   {over_cost}");
    println!("guardrail breaches: {guard_breaches}");
    println!(
        "diversity p10/p25/p50/p75: {:.4} {:.4} {:.4} {:.4}",
        pct(0.10),
        pct(0.25),
        pct(0.50),
        pct(0.75)
    );
    println!("best utility:       {:.6}", best.1);
    println!("best config:        {}", configs[best.0].canonical_string());
    println!("elapsed:            {elapsed:?}");
}
