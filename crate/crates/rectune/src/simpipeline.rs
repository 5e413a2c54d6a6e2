//! Deterministic three-stage ranking-pipeline simulator.
//!
//! A `Simulator` turns a scenario into a reproducible world: candidate pools
//! with hidden per-item appeal, noisy model heads, and a position-biased user
//! model. Configurations are scored by composing pre-ranking, ranking, and
//! re-ranking over sampled requests, then measuring engagement and diversity
//! from simulated feedback. Everything is a pure function of
//! (scenario seed, request id, config), so the objective is non-differentiable
//! but exactly repeatable.

use crate::objective::{utility, CostCheck, NorthStar, ObjectiveError, UtilityOutcome};
use crate::rng::{hash_str, mix64, StreamRng};
use crate::scenario::Scenario;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config is missing required parameter `{0}`")]
    MissingParam(String),
    #[error("config parameter `{name}` invalid: {message}")]
    BadParam { name: String, message: String },
    #[error("degenerate scenario: {0}")]
    Degenerate(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

fn bad_param(name: &str, message: impl Into<String>) -> PipelineError {
    PipelineError::BadParam {
        name: name.to_string(),
        message: message.into(),
    }
}

/// The joint parameter vector being optimized. Parameter names carry stage
/// prefixes (`pre.`, `rank.`, `re.`); the map is ordered so the canonical
/// string form is stable and config equality is string equality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct SystemConfig {
    pub params: BTreeMap<String, f64>,
}

impl SystemConfig {
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self {
            params: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<f64, PipelineError> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| PipelineError::MissingParam(name.to_string()))
    }

    /// Integer-kind parameters hold integral values; anything else is a
    /// config error, not silent rounding.
    pub fn get_usize(&self, name: &str) -> Result<usize, PipelineError> {
        let v = self.get(name)?;
        if !v.is_finite() || (v - v.round()).abs() > 1e-9 || v < 0.0 {
            return Err(bad_param(name, format!("expected a non-negative integer, got {v}")));
        }
        Ok(v.round() as usize)
    }

    /// Canonical serialization: sorted keys, shortest round-trip floats.
    pub fn canonical_string(&self) -> String {
        serde_json::to_string(&self.params).expect("config serializes")
    }

    pub fn from_canonical(s: &str) -> Result<Self, serde_json::Error> {
        Ok(Self {
            params: serde_json::from_str(s)?,
        })
    }
}

/// One candidate. `head_scores` holds the synthetic model outputs visible to
/// the pipeline; the latent appeal vectors drive the user model only and are
/// never serialized or shown to agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub item_id: u64,
    pub topic: u32,
    pub head_scores: BTreeMap<String, f64>,
    latent_click: Vec<f64>,
    latent_heart: Vec<f64>,
}

/// A candidate pool plus the hidden user taste that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub request_id: u64,
    pub pool: Vec<Item>,
    user_pref: Vec<f64>,
    stream_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pre,
    Rank,
    Re,
}

/// Ordered candidate list emitted by a stage: sorted by fused score
/// descending, ties broken by ascending item id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub entries: Vec<(u64, f64)>,
    pub stage: Stage,
}

impl RankedList {
    pub fn item_ids(&self) -> Vec<u64> {
        self.entries.iter().map(|(id, _)| *id).collect()
    }
}

/// Simulated user actions for one exposed list; `hearted` implies `clicked`.
#[derive(Debug, Clone, PartialEq)]
pub struct Feedback {
    pub request_id: u64,
    pub outcomes: Vec<PositionOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionOutcome {
    pub item_id: u64,
    pub clicked: bool,
    pub hearted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct MetricVector {
    pub values: BTreeMap<String, f64>,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// DCG-style position discount.
fn position_bias(position_1based: usize) -> f64 {
    1.0 / ((position_1based as f64 + 2.0).log2())
}

/// Maps a head name to a fixed signal quality in [0.2, 0.8]: the fraction of
/// the head's score explained by true appeal rather than noise.
fn head_quality(head: &str) -> f64 {
    0.2 + 0.6 * (mix64(hash_str(head)) as f64 / u64::MAX as f64)
}

const TAG_USER: u64 = 0x757365_72; // "user"
const TAG_ITEM: u64 = 0x6974_656d; // "item"
const TAG_CLICK: u64 = 0x636c_6963_6b; // "click"
const TAG_HEART: u64 = 0x6865_6172_74; // "heart"

#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    scenario: &'a Scenario,
    stream_seed: u64,
}

impl<'a> Simulator<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        Self {
            scenario,
            stream_seed: scenario.seed,
        }
    }

    /// Overrides the stream seed (the scenario seed mixed with an experiment
    /// seed) so distinct experiments can sample distinct request populations.
    pub fn with_stream_seed(mut self, seed: u64) -> Self {
        self.stream_seed = seed;
        self
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    /// Materializes a request. Deterministic in (stream seed, request id).
    pub fn generate_request(&self, request_id: u64) -> Result<Request, PipelineError> {
        let sc = self.scenario;
        if sc.pool_size == 0 {
            return Err(PipelineError::Degenerate("pool_size is 0".into()));
        }
        let dim = sc.latent_dim;
        let scale = 1.0 / (dim as f64).sqrt();
        let mut user_rng = StreamRng::from_parts(&[self.stream_seed, request_id, TAG_USER]);
        let user_pref: Vec<f64> = (0..dim).map(|_| user_rng.next_gaussian()).collect();

        let mut pool = Vec::with_capacity(sc.pool_size);
        for item_id in 0..sc.pool_size as u64 {
            let mut rng = StreamRng::from_parts(&[self.stream_seed, request_id, item_id, TAG_ITEM]);
            let topic = rng.next_below(u64::from(sc.topics)) as u32;
            let latent_click: Vec<f64> = (0..dim).map(|_| rng.next_gaussian() * scale).collect();
            let latent_heart: Vec<f64> = (0..dim).map(|_| rng.next_gaussian() * scale).collect();
            let true_click = logistic(dot(&user_pref, &latent_click));
            let true_heart = logistic(dot(&user_pref, &latent_heart));

            let mut head_scores = BTreeMap::new();
            for head in &sc.pre_heads {
                let q = head_quality(head);
                let noise = rng.next_f64();
                head_scores.insert(head.clone(), q * true_click + (1.0 - q) * noise);
            }
            // Rank heads refine the paired pre head toward true appeal;
            // even-indexed heads target click appeal, odd-indexed heart appeal.
            for (j, head) in sc.rank_heads.iter().enumerate() {
                let paired = &sc.pre_heads[j % sc.pre_heads.len()];
                let pre_score = head_scores[paired];
                let target = if j % 2 == 0 { true_click } else { true_heart };
                head_scores.insert(
                    head.clone(),
                    sc.rank_fidelity * target + (1.0 - sc.rank_fidelity) * pre_score,
                );
            }
            pool.push(Item {
                item_id,
                topic,
                head_scores,
                latent_click,
                latent_heart,
            });
        }
        Ok(Request {
            request_id,
            pool,
            user_pref,
            stream_seed: self.stream_seed,
        })
    }

    /// Pre-ranking: weighted head fusion, then Top-K1.
    pub fn run_pre(
        &self,
        request: &Request,
        config: &SystemConfig,
    ) -> Result<RankedList, PipelineError> {
        let k1 = config.get_usize("pre.K1")?;
        if k1 < 1 {
            return Err(bad_param("pre.K1", "must be >= 1"));
        }
        let scored = self.fuse(&request.pool, &self.scenario.pre_heads, "pre.w_", config)?;
        Ok(RankedList {
            entries: top_k(scored, k1),
            stage: Stage::Pre,
        })
    }

    /// Ranking: re-scores the pre-ranked candidates with the rank heads, then
    /// Top-K2. K2 may not exceed K1 (inconsistent truncation).
    pub fn run_rank(
        &self,
        c1: &RankedList,
        request: &Request,
        config: &SystemConfig,
    ) -> Result<RankedList, PipelineError> {
        let k1 = config.get_usize("pre.K1")?;
        let k2 = config.get_usize("rank.K2")?;
        if k2 < 1 {
            return Err(bad_param("rank.K2", "must be >= 1"));
        }
        if k2 > k1 {
            return Err(bad_param(
                "rank.K2",
                format!("K2 ({k2}) must not exceed pre.K1 ({k1})"),
            ));
        }
        let by_id = index_pool(&request.pool);
        let candidates: Vec<&Item> = c1
            .entries
            .iter()
            .map(|(id, _)| by_id[id])
            .collect();
        let scored = self.fuse_refs(&candidates, &self.scenario.rank_heads, "rank.w_", config)?;
        Ok(RankedList {
            entries: top_k(scored, k2),
            stage: Stage::Rank,
        })
    }

    /// Re-ranking: greedy topic-diverse selection of N items. At each step the
    /// remaining item with the highest penalty-adjusted score is taken
    /// (ties by ascending item id); topics at their cap are skipped. Cap
    /// exhaustion may return fewer than N items.
    pub fn run_re(
        &self,
        c2: &RankedList,
        request: &Request,
        config: &SystemConfig,
    ) -> Result<RankedList, PipelineError> {
        let penalty = config.get("re.diversity_penalty")?;
        if penalty < 0.0 {
            return Err(bad_param("re.diversity_penalty", "must be >= 0"));
        }
        let topic_cap = config.get_usize("re.topic_cap")?;
        if topic_cap < 1 {
            return Err(bad_param("re.topic_cap", "must be >= 1"));
        }
        let n = config.get_usize("re.N")?;
        if n < 1 {
            return Err(bad_param("re.N", "must be >= 1"));
        }
        let k2 = config.get_usize("rank.K2")?;
        if n > k2 {
            return Err(bad_param(
                "re.N",
                format!("list size N ({n}) must not exceed rank.K2 ({k2})"),
            ));
        }
        let by_id = index_pool(&request.pool);
        let mut remaining: Vec<(u64, f64, u32)> = c2
            .entries
            .iter()
            .map(|(id, score)| (*id, *score, by_id[id].topic))
            .collect();
        let mut topic_counts: BTreeMap<u32, usize> = BTreeMap::new();
        let mut selected = Vec::with_capacity(n);
        while selected.len() < n && !remaining.is_empty() {
            let mut best: Option<(usize, f64, u64)> = None;
            for (idx, &(id, score, topic)) in remaining.iter().enumerate() {
                let count = topic_counts.get(&topic).copied().unwrap_or(0);
                if count >= topic_cap {
                    continue;
                }
                let adjusted = score - penalty * count as f64;
                let candidate = (idx, adjusted, id);
                best = match best {
                    None => Some(candidate),
                    Some((_, b_adj, b_id)) => {
                        if adjusted > b_adj || (adjusted == b_adj && id < b_id) {
                            Some(candidate)
                        } else {
                            best
                        }
                    }
                };
            }
            match best {
                None => break, // every remaining topic is at cap
                Some((idx, adjusted, _)) => {
                    let (id, _, topic) = remaining.remove(idx);
                    *topic_counts.entry(topic).or_insert(0) += 1;
                    selected.push((id, adjusted));
                }
            }
        }
        Ok(RankedList {
            entries: selected,
            stage: Stage::Re,
        })
    }

    /// The composite pipeline: pre -> rank -> re.
    pub fn run_system(
        &self,
        request: &Request,
        config: &SystemConfig,
    ) -> Result<RankedList, PipelineError> {
        let c1 = self.run_pre(request, config)?;
        let c2 = self.run_rank(&c1, request, config)?;
        self.run_re(&c2, request, config)
    }

    /// Simulated user actions on an exposed list.
    ///
    /// Click probability is a position bias times the item's hidden click
    /// appeal; heart probability is conditional on a click. The uniform draws
    /// are keyed per (stream seed, request id, item id, outcome type), never
    /// per position, so the same item under two configs receives the same
    /// draw: common random numbers for paired experiments.
    pub fn simulate_feedback(
        &self,
        request: &Request,
        list: &RankedList,
    ) -> Result<Feedback, PipelineError> {
        if list.entries.is_empty() {
            return Err(PipelineError::EmptyInput("ranked list is empty".into()));
        }
        let by_id = index_pool(&request.pool);
        let mut outcomes = Vec::with_capacity(list.entries.len());
        for (pos0, (item_id, _)) in list.entries.iter().enumerate() {
            let item = by_id[item_id];
            let p_click = position_bias(pos0 + 1) * logistic(dot(&request.user_pref, &item.latent_click));
            let mut click_rng = StreamRng::from_parts(&[
                request.stream_seed,
                request.request_id,
                *item_id,
                TAG_CLICK,
            ]);
            let clicked = click_rng.next_f64() < p_click;
            let hearted = if clicked {
                let p_heart = logistic(dot(&request.user_pref, &item.latent_heart));
                let mut heart_rng = StreamRng::from_parts(&[
                    request.stream_seed,
                    request.request_id,
                    *item_id,
                    TAG_HEART,
                ]);
                heart_rng.next_f64() < p_heart
            } else {
                false
            };
            outcomes.push(PositionOutcome {
                item_id: *item_id,
                clicked,
                hearted,
            });
        }
        Ok(Feedback {
            request_id: request.request_id,
            outcomes,
        })
    }

    /// Metrics for a single request: click count, heart count, and the
    /// fraction of distinct topics in the exposed list.
    pub fn per_request_metrics(
        &self,
        request: &Request,
        list: &RankedList,
        feedback: &Feedback,
    ) -> Result<MetricVector, PipelineError> {
        let by_id = index_pool(&request.pool);
        let clicks = feedback.outcomes.iter().filter(|o| o.clicked).count() as f64;
        let hearts = feedback.outcomes.iter().filter(|o| o.hearted).count() as f64;
        let diversity = if list.entries.is_empty() {
            0.0
        } else {
            let topics: BTreeSet<u32> = list
                .entries
                .iter()
                .map(|(id, _)| by_id[id].topic)
                .collect();
            topics.len() as f64 / list.entries.len() as f64
        };
        let mut values = BTreeMap::new();
        for metric in &self.scenario.metrics {
            let v = match metric.as_str() {
                "engagement1" => clicks,
                "engagement2" => hearts,
                "diversity" => diversity,
                other => return Err(PipelineError::Degenerate(format!("unknown metric `{other}`"))),
            };
            values.insert(metric.clone(), v);
        }
        Ok(MetricVector { values })
    }

    /// Mean metrics over parallel (request, list, feedback) triples.
    pub fn compute_metrics(
        &self,
        requests: &[Request],
        lists: &[RankedList],
        feedbacks: &[Feedback],
    ) -> Result<MetricVector, PipelineError> {
        if requests.is_empty() {
            return Err(PipelineError::EmptyInput(
                "metric means are undefined for zero requests".into(),
            ));
        }
        assert_eq!(requests.len(), lists.len());
        assert_eq!(requests.len(), feedbacks.len());
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for ((request, list), feedback) in requests.iter().zip(lists).zip(feedbacks) {
            let mv = self.per_request_metrics(request, list, feedback)?;
            for (k, v) in mv.values {
                *sums.entry(k).or_insert(0.0) += v;
            }
        }
        let n = requests.len() as f64;
        Ok(MetricVector {
            values: sums.into_iter().map(|(k, v)| (k, v / n)).collect(),
        })
    }

    /// End-to-end per-request evaluation: generate, run, observe, measure.
    pub fn evaluate_request(
        &self,
        request_id: u64,
        config: &SystemConfig,
    ) -> Result<MetricVector, PipelineError> {
        let request = self.generate_request(request_id)?;
        self.evaluate_on(&request, config)
    }

    /// Same as `evaluate_request` but over a pre-generated request.
    pub fn evaluate_on(
        &self,
        request: &Request,
        config: &SystemConfig,
    ) -> Result<MetricVector, PipelineError> {
        let list = self.run_system(request, config)?;
        let feedback = self.simulate_feedback(request, &list)?;
        self.per_request_metrics(request, &list, &feedback)
    }

    /// Serving cost of a configuration: K1 items scored by the ranking model
    /// plus K2 items processed by re-ranking. Deterministic in the config.
    pub fn compute_cost(&self, config: &SystemConfig) -> Result<f64, PipelineError> {
        let k1 = config.get_usize("pre.K1")? as f64;
        let k2 = config.get_usize("rank.K2")? as f64;
        Ok(k1 * self.scenario.cost_per_rank_item + k2 * self.scenario.cost_per_re_item)
    }

    /// Utility of raw metric values under a north star, with the scenario's
    /// cost budget applied.
    pub fn utility_of(
        &self,
        metrics: &MetricVector,
        config: &SystemConfig,
        north_star: &NorthStar,
    ) -> Result<UtilityOutcome, PipelineError> {
        let cost = self.compute_cost(config)?;
        Ok(utility(
            &metrics.values,
            north_star,
            Some(CostCheck {
                cost,
                max_cost: self.scenario.max_cost,
            }),
        )?)
    }

    fn fuse(
        &self,
        items: &[Item],
        heads: &[String],
        weight_prefix: &str,
        config: &SystemConfig,
    ) -> Result<Vec<(u64, f64)>, PipelineError> {
        let refs: Vec<&Item> = items.iter().collect();
        self.fuse_refs(&refs, heads, weight_prefix, config)
    }

    fn fuse_refs(
        &self,
        items: &[&Item],
        heads: &[String],
        weight_prefix: &str,
        config: &SystemConfig,
    ) -> Result<Vec<(u64, f64)>, PipelineError> {
        let weights: Vec<f64> = heads
            .iter()
            .map(|h| config.get(&format!("{weight_prefix}{h}")))
            .collect::<Result<_, _>>()?;
        Ok(items
            .iter()
            .map(|item| {
                let fused: f64 = heads
                    .iter()
                    .zip(&weights)
                    .map(|(h, w)| w * item.head_scores[h])
                    .sum();
                (item.item_id, fused)
            })
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn index_pool(pool: &[Item]) -> BTreeMap<&u64, &Item> {
    pool.iter().map(|item| (&item.item_id, item)).collect()
}

/// Sort by score descending, ties by ascending item id, keep the top k.
fn top_k(mut scored: Vec<(u64, f64)>, k: usize) -> Vec<(u64, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}
