//! The planted-optimum benchmark.
//!
//! A fixed scenario and skill pair whose best configuration is known through
//! exhaustive grid search, so optimization efficacy is testable. Six
//! parameters vary on a 4-level grid (4^6 = 4096 points); the three
//! truncation sizes stay at their initial values. The cost budget makes the
//! largest K1/K2 combinations infeasible and the diversity guardrail rules
//! out the most aggressive engagement-chasing configs.

use crate::objective::{Direction, Guardrail, NorthStar, PrimaryMetric};
use crate::scenario::Scenario;
use crate::simpipeline::SystemConfig;
use crate::skillhub::{
    ParamKind, ParamScale, ParamSpec, Requirement, SearchSpace, Skill, ToolDescriptor,
};
use std::collections::BTreeMap;

/// Request count per experiment; the grid oracle and the loop share it so
/// their utilities are the same estimator.
pub const NUM_REQUESTS: u64 = 200;
/// Experiment seed shared by the loop and the oracle (common random numbers).
pub const EXPERIMENT_SEED: u64 = 0;
/// Diversity floor; calibrated against the 4096-point grid so a noticeable
/// minority of configs breach it.
pub const DIVERSITY_BASELINE: f64 = 0.62;

pub fn planted_scenario() -> Scenario {
    Scenario {
        name: "planted".into(),
        seed: 2024,
        pool_size: 100,
        topics: 6,
        pre_heads: vec!["pctr".into(), "ppop".into()],
        rank_heads: vec!["ctr".into(), "heart".into()],
        latent_dim: 4,
        rank_fidelity: 0.9,
        cost_per_rank_item: 1.0,
        cost_per_re_item: 4.0,
        max_cost: 140.0,
        metrics: vec![
            "engagement1".into(),
            "engagement2".into(),
            "diversity".into(),
        ],
    }
}

fn cont(lower: f64, upper: f64, sensitive: bool) -> ParamSpec {
    ParamSpec {
        lower,
        upper,
        kind: ParamKind::Continuous,
        scale: ParamScale::Linear,
        sensitive,
    }
}

fn int(lower: f64, upper: f64) -> ParamSpec {
    ParamSpec {
        lower,
        upper,
        kind: ParamKind::Integer,
        scale: ParamScale::Linear,
        sensitive: false,
    }
}

/// The six grid-varied parameter names, in grid nesting order.
pub const GRID_PARAMS: [&str; 6] = [
    "pre.w_pctr",
    "pre.w_ppop",
    "rank.w_ctr",
    "rank.w_heart",
    "re.diversity_penalty",
    "re.topic_cap",
];

pub fn planted_space() -> SearchSpace {
    SearchSpace {
        params: [
            ("pre.w_pctr".to_string(), cont(0.0, 2.0, true)),
            ("pre.w_ppop".to_string(), cont(0.0, 2.0, false)),
            ("rank.w_ctr".to_string(), cont(0.0, 2.0, true)),
            ("rank.w_heart".to_string(), cont(0.0, 2.0, true)),
            ("re.diversity_penalty".to_string(), cont(0.0, 1.0, false)),
            ("re.topic_cap".to_string(), int(1.0, 4.0)),
            // disjoint truncation ranges keep K2 <= K1 and N <= K2 by
            // construction
            ("pre.K1".to_string(), int(40.0, 80.0)),
            ("rank.K2".to_string(), int(10.0, 20.0)),
            ("re.N".to_string(), int(5.0, 10.0)),
        ]
        .into_iter()
        .collect(),
    }
}

pub fn initial_config() -> SystemConfig {
    SystemConfig::from_pairs([
        ("pre.w_pctr", 1.0),
        ("pre.w_ppop", 1.0),
        ("rank.w_ctr", 1.0),
        ("rank.w_heart", 1.0),
        ("re.diversity_penalty", 0.5),
        ("re.topic_cap", 2.0),
        ("pre.K1", 60.0),
        ("rank.K2", 15.0),
        ("re.N", 8.0),
    ])
}

pub fn planted_skill() -> Skill {
    Skill {
        name: "planted".into(),
        version: 1,
        task_context: "Maximize engagement on the planted benchmark while \
holding the diversity floor and the serving-cost budget."
            .into(),
        requirement: Requirement {
            search_space: planted_space(),
            output_schema: "config-batch-v1".into(),
            infra_constraints: "simulated platform only".into(),
        },
        north_star: NorthStar {
            primary: vec![
                PrimaryMetric {
                    metric: "engagement1".into(),
                    direction: Direction::Increase,
                },
                PrimaryMetric {
                    metric: "engagement2".into(),
                    direction: Direction::Increase,
                },
            ],
            guardrails: vec![Guardrail {
                metric: "diversity".into(),
                direction: Direction::Increase,
                baseline: DIVERSITY_BASELINE,
            }],
        },
        initial_config: initial_config(),
        domain_knowledge: vec![],
        tools: vec![ToolDescriptor {
            id: "simulated-platform".into(),
            description: "paired simulated A/B experiments".into(),
        }],
    }
}

/// All 4096 grid configurations: each grid parameter takes 4 evenly spaced
/// levels across its range (integer parameters rounded), the rest stay at the
/// initial config.
pub fn grid_configs() -> Vec<SystemConfig> {
    let space = planted_space();
    let base = initial_config();
    let levels: Vec<Vec<f64>> = GRID_PARAMS
        .iter()
        .map(|name| {
            let spec = &space.params[*name];
            (0..4)
                .map(|i| spec.clip(spec.lower + spec.range() * i as f64 / 3.0))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(4096);
    for idx in 0..4096usize {
        let mut params: BTreeMap<String, f64> = base.params.clone();
        let mut rest = idx;
        for (levels_p, name) in levels.iter().zip(GRID_PARAMS) {
            params.insert(name.to_string(), levels_p[rest % 4]);
            rest /= 4;
        }
        out.push(SystemConfig { params });
    }
    out
}
