//! North-star objectives: primary metrics to push, guardrail metrics that must
//! hold a baseline, and the scalar utility used to rank candidates.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("metric `{0}` named in the north star is absent from the input")]
    MissingMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increase,
    Decrease,
}

impl Direction {
    /// Sign applied so that "better" is always "larger".
    pub fn sign(self) -> f64 {
        match self {
            Direction::Increase => 1.0,
            Direction::Decrease => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimaryMetric {
    pub metric: String,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guardrail {
    pub metric: String,
    pub direction: Direction,
    /// Baseline b: the metric must stay at or above b (direction-adjusted).
    pub baseline: f64,
}

/// Primary metrics (summed into utility) plus guardrails (feasibility gates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NorthStar {
    pub primary: Vec<PrimaryMetric>,
    pub guardrails: Vec<Guardrail>,
}

impl NorthStar {
    pub fn direction_of(&self, metric: &str) -> Option<Direction> {
        self.primary
            .iter()
            .find(|p| p.metric == metric)
            .map(|p| p.direction)
            .or_else(|| {
                self.guardrails
                    .iter()
                    .find(|g| g.metric == metric)
                    .map(|g| g.direction)
            })
    }

    pub fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .primary
            .iter()
            .map(|p| p.metric.clone())
            .chain(self.guardrails.iter().map(|g| g.metric.clone()))
            .collect();
        names.sort();
        names.dedup();
        names
    }
}

/// Optional cost gate on top of guardrails.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostCheck {
    pub cost: f64,
    pub max_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityOutcome {
    pub feasible: bool,
    /// Sum of direction-adjusted primary values; −∞ when infeasible so that
    /// infeasible candidates sink in any ranking.
    pub value: f64,
}

/// Scores a metric map against a north star.
///
/// Works on either raw metric values or relative deltas: both routes are the
/// same sum with a direction sign per metric; only the inputs differ.
/// A guardrail at exactly its baseline is feasible (the bound is inclusive).
pub fn utility(
    values: &BTreeMap<String, f64>,
    north_star: &NorthStar,
    cost: Option<CostCheck>,
) -> Result<UtilityOutcome, ObjectiveError> {
    let mut total = 0.0;
    for p in &north_star.primary {
        let v = values
            .get(&p.metric)
            .ok_or_else(|| ObjectiveError::MissingMetric(p.metric.clone()))?;
        total += p.direction.sign() * v;
    }
    let mut feasible = true;
    for g in &north_star.guardrails {
        let v = values
            .get(&g.metric)
            .ok_or_else(|| ObjectiveError::MissingMetric(g.metric.clone()))?;
        if g.direction.sign() * v < g.direction.sign() * g.baseline {
            feasible = false;
        }
    }
    if let Some(c) = cost {
        if c.cost > c.max_cost {
            feasible = false;
        }
    }
    Ok(UtilityOutcome {
        feasible,
        value: if feasible { total } else { f64::NEG_INFINITY },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn north_star() -> NorthStar {
        NorthStar {
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
                baseline: 0.0,
            }],
        }
    }

    fn values(e1: f64, e2: f64, div: f64) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("engagement1".into(), e1);
        m.insert("engagement2".into(), e2);
        m.insert("diversity".into(), div);
        m
    }

    #[test]
    fn sums_primary_deltas() {
        // Lift pattern from a pre-ranking retrieval experiment: two primary
        // engagement lifts plus a diversity guardrail above baseline.
        let out = utility(&values(0.75, 0.90, 0.48), &north_star(), None).unwrap();
        assert!(out.feasible);
        assert!((out.value - 1.65).abs() < 1e-12);
    }

    #[test]
    fn guardrail_at_baseline_is_feasible() {
        let out = utility(&values(1.0, 1.0, 0.0), &north_star(), None).unwrap();
        assert!(out.feasible);
    }

    #[test]
    fn guardrail_breach_dominates_primaries() {
        let out = utility(&values(100.0, 100.0, -0.1), &north_star(), None).unwrap();
        assert!(!out.feasible);
        assert_eq!(out.value, f64::NEG_INFINITY);
    }

    #[test]
    fn decrease_direction_guardrail() {
        let mut ns = north_star();
        ns.guardrails[0].direction = Direction::Decrease;
        ns.guardrails[0].baseline = 0.5;
        // Decrease metric must stay at or below baseline.
        assert!(utility(&values(1.0, 1.0, 0.4), &ns, None).unwrap().feasible);
        assert!(!utility(&values(1.0, 1.0, 0.6), &ns, None).unwrap().feasible);
    }

    #[test]
    fn cost_over_budget_is_infeasible() {
        let out = utility(
            &values(1.0, 1.0, 1.0),
            &north_star(),
            Some(CostCheck {
                cost: 1001.0,
                max_cost: 1000.0,
            }),
        )
        .unwrap();
        assert!(!out.feasible);
    }

    #[test]
    fn missing_metric_is_an_error() {
        let mut m = values(1.0, 1.0, 1.0);
        m.remove("engagement2");
        assert!(utility(&m, &north_star(), None).is_err());
    }
}
