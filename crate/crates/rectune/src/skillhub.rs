//! The versioned skill repository.
//!
//! A skill is the six-component task definition that parameterizes every
//! agent: task context, requirement (search space + output schema + infra
//! constraints), north-star metrics, initial configuration, domain knowledge,
//! and tool descriptors. Skills are immutable once written; evolution writes
//! `skills/<name>/v<N+1>.json` alongside the old version.

use crate::objective::NorthStar;
use crate::rng::StreamRng;
use crate::simpipeline::SystemConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SkillError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("skill parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid skill field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> SkillError {
    SkillError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Continuous,
    Integer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub lower: f64,
    pub upper: f64,
    pub kind: ParamKind,
    pub scale: ParamScale,
    pub sensitive: bool,
}

impl ParamSpec {
    pub fn range(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn clip(&self, value: f64) -> f64 {
        let v = value.clamp(self.lower, self.upper);
        match self.kind {
            ParamKind::Continuous => v,
            ParamKind::Integer => v.round().clamp(self.lower, self.upper),
        }
    }

    /// Uniform sample within bounds; log-scale parameters sample in log space.
    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        let v = match self.scale {
            ParamScale::Linear => rng.next_range(self.lower, self.upper),
            ParamScale::Log => {
                let lo = self.lower.ln();
                let hi = self.upper.ln();
                rng.next_range(lo, hi).exp()
            }
        };
        self.clip(v)
    }
}

/// The allowed value ranges for every tunable parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct SearchSpace {
    pub params: BTreeMap<String, ParamSpec>,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), SkillError> {
        if self.params.is_empty() {
            return Err(invalid("requirement.search_space", "must be nonempty"));
        }
        for (name, spec) in &self.params {
            let field = format!("requirement.search_space.{name}");
            if !(spec.lower < spec.upper) {
                return Err(invalid(&field, "lower bound must be strictly below upper"));
            }
            if spec.scale == ParamScale::Log && spec.lower <= 0.0 {
                return Err(invalid(&field, "log scale requires a positive lower bound"));
            }
            if spec.kind == ParamKind::Integer
                && (spec.lower.fract() != 0.0 || spec.upper.fract() != 0.0)
            {
                return Err(invalid(&field, "integer parameters need integral bounds"));
            }
        }
        Ok(())
    }

    /// Checks a config for schema closure (exact parameter set) and bounds.
    pub fn validate_config(&self, config: &SystemConfig) -> Result<(), SkillError> {
        for name in config.params.keys() {
            if !self.params.contains_key(name) {
                return Err(invalid(
                    format!("config.{name}"),
                    "parameter not declared in the search space",
                ));
            }
        }
        for (name, spec) in &self.params {
            let field = format!("config.{name}");
            let Some(&v) = config.params.get(name) else {
                return Err(invalid(&field, "required parameter missing"));
            };
            if !v.is_finite() || v < spec.lower || v > spec.upper {
                return Err(invalid(
                    &field,
                    format!("value {v} outside bounds [{}, {}]", spec.lower, spec.upper),
                ));
            }
            if spec.kind == ParamKind::Integer && (v - v.round()).abs() > 1e-9 {
                return Err(invalid(&field, format!("expected an integral value, got {v}")));
            }
        }
        Ok(())
    }

    /// Relative L∞ distance between two configs: max over parameters of
    /// |a − b| / range. Missing parameters count as maximal distance.
    pub fn relative_linf(&self, a: &SystemConfig, b: &SystemConfig) -> f64 {
        let mut max = 0.0f64;
        for (name, spec) in &self.params {
            let d = match (a.params.get(name), b.params.get(name)) {
                (Some(x), Some(y)) => (x - y).abs() / spec.range(),
                _ => f64::INFINITY,
            };
            max = max.max(d);
        }
        max
    }
}

/// Machine-checkable rule forms; kept tiny so the critic can enforce them
/// deterministically. Free-text knowledge is prompt-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "relation")]
pub enum Rule {
    /// Parameter should stay at or below the threshold.
    LeThreshold { parameter: String, threshold: f64 },
    /// Parameter should stay at or above the threshold.
    GeThreshold { parameter: String, threshold: f64 },
    /// Increasing the parameter correlates with utility loss on `metric`.
    MonotoneUpHurts { parameter: String, metric: String },
    /// Decreasing the parameter correlates with utility loss on `metric`.
    MonotoneDownHurts { parameter: String, metric: String },
}

impl Rule {
    pub fn parameter(&self) -> &str {
        match self {
            Rule::LeThreshold { parameter, .. }
            | Rule::GeThreshold { parameter, .. }
            | Rule::MonotoneUpHurts { parameter, .. }
            | Rule::MonotoneDownHurts { parameter, .. } => parameter,
        }
    }

    pub fn relation_name(&self) -> &'static str {
        match self {
            Rule::LeThreshold { .. } => "le_threshold",
            Rule::GeThreshold { .. } => "ge_threshold",
            Rule::MonotoneUpHurts { .. } => "monotone_up_hurts",
            Rule::MonotoneDownHurts { .. } => "monotone_down_hurts",
        }
    }

    /// Threshold rules reject violating configs outright; monotone rules are
    /// advisory (they steer proposals, not feasibility).
    pub fn violated_by(&self, config: &SystemConfig) -> bool {
        match self {
            Rule::LeThreshold { parameter, threshold } => config
                .params
                .get(parameter)
                .is_some_and(|v| *v > *threshold),
            Rule::GeThreshold { parameter, threshold } => config
                .params
                .get(parameter)
                .is_some_and(|v| *v < *threshold),
            Rule::MonotoneUpHurts { .. } | Rule::MonotoneDownHurts { .. } => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Authored,
    Learned { task_ids: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub text: String,
    pub rule: Option<Rule>,
    pub provenance: Provenance,
    /// RFC 3339 UTC.
    pub created_at: String,
    pub confidence: f64,
}

/// Declarative tool descriptor; resolved by the online agent, never executed
/// from skill data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub id: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Requirement {
    pub search_space: SearchSpace,
    /// Identifier of the output schema proposals must follow.
    pub output_schema: String,
    pub infra_constraints: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub name: String,
    pub version: u32,
    pub task_context: String,
    pub requirement: Requirement,
    pub north_star: NorthStar,
    pub initial_config: SystemConfig,
    pub domain_knowledge: Vec<KnowledgeEntry>,
    pub tools: Vec<ToolDescriptor>,
}

impl Skill {
    pub fn validate(&self) -> Result<(), SkillError> {
        if self.name.is_empty() {
            return Err(invalid("name", "must be nonempty"));
        }
        if self.version == 0 {
            return Err(invalid("version", "versions start at 1"));
        }
        self.requirement.search_space.validate()?;
        if self.north_star.primary.is_empty() {
            return Err(invalid("north_star.primary", "must list at least one metric"));
        }
        for g in &self.north_star.guardrails {
            if self.north_star.primary.iter().any(|p| p.metric == g.metric) {
                return Err(invalid(
                    format!("north_star.guardrails.{}", g.metric),
                    "metric is also listed as primary",
                ));
            }
        }
        self.requirement
            .search_space
            .validate_config(&self.initial_config)
            .map_err(|e| match e {
                SkillError::Invalid { field, message } => SkillError::Invalid {
                    field: field.replace("config.", "initial_config."),
                    message,
                },
                other => other,
            })?;
        for (i, entry) in self.domain_knowledge.iter().enumerate() {
            let field = format!("domain_knowledge[{i}]");
            if !(0.0..=1.0).contains(&entry.confidence) {
                return Err(invalid(format!("{field}.confidence"), "must lie in [0, 1]"));
            }
            if let Provenance::Learned { task_ids } = &entry.provenance {
                if task_ids.is_empty() {
                    return Err(invalid(
                        format!("{field}.provenance"),
                        "learned entries need at least one source task id",
                    ));
                }
            }
            if let Some(rule) = &entry.rule {
                if !self
                    .requirement
                    .search_space
                    .params
                    .contains_key(rule.parameter())
                {
                    return Err(invalid(
                        format!("{field}.rule.parameter"),
                        format!("unknown parameter `{}`", rule.parameter()),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("skill serializes");
        s.push('\n');
        s
    }

    /// Path of this skill version under a skills root.
    pub fn version_path(root: &Path, name: &str, version: u32) -> PathBuf {
        root.join(name).join(format!("v{version}.json"))
    }
}

pub fn load_skill(path: &Path) -> Result<Skill, SkillError> {
    let text = std::fs::read_to_string(path)?;
    let skill: Skill = serde_json::from_str(&text)?;
    skill.validate()?;
    Ok(skill)
}

pub fn save_skill(skill: &Skill, path: &Path) -> Result<(), SkillError> {
    skill.validate()?;
    crate::memory::atomic_write(path, skill.canonical_json().as_bytes()).map_err(SkillError::Io)
}

/// Elite history line for prompt rendering: the record plus its archive
/// utility.
pub struct EliteForPrompt<'a> {
    pub record: &'a crate::memory::TaskRecord,
    pub utility: f64,
}

/// Deterministic actor prompt. Fixed section order; no timestamps, no map
/// iteration nondeterminism, so identical inputs render byte-identical text.
pub fn render_actor_prompt(
    skill: &Skill,
    elites: &[EliteForPrompt<'_>],
    batch_size: usize,
    extra_args: &[String],
) -> String {
    assert!(batch_size >= 1);
    let mut out = String::new();
    out.push_str("## Task Context\n");
    out.push_str(&skill.task_context);
    out.push_str("\n\n## Parameters\n");
    out.push_str("| name | lower | upper | kind | scale | sensitive | current |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for (name, spec) in &skill.requirement.search_space.params {
        let current = skill
            .initial_config
            .params
            .get(name)
            .map_or("-".to_string(), |v| format!("{v}"));
        out.push_str(&format!(
            "| {name} | {} | {} | {:?} | {:?} | {} | {current} |\n",
            spec.lower, spec.upper, spec.kind, spec.scale, spec.sensitive
        ));
    }
    out.push_str("\n## North Star Metrics\n");
    for p in &skill.north_star.primary {
        out.push_str(&format!("- primary: {} ({:?})\n", p.metric, p.direction));
    }
    for g in &skill.north_star.guardrails {
        out.push_str(&format!(
            "- guardrail: {} ({:?}) must hold baseline {}\n",
            g.metric, g.direction, g.baseline
        ));
    }
    out.push_str("\n## Domain Knowledge\n");
    if skill.domain_knowledge.is_empty() {
        out.push_str("(none)\n");
    }
    for entry in &skill.domain_knowledge {
        out.push_str(&format!("- {}\n", entry.text));
    }
    out.push_str("\n## Elite History\n");
    if elites.is_empty() {
        out.push_str("no prior experiments\n");
    } else {
        // newest first, capped
        let mut ordered: Vec<&EliteForPrompt> = elites.iter().collect();
        ordered.sort_by(|a, b| {
            b.record
                .proposed_time
                .cmp(&a.record.proposed_time)
                .then(a.record.id.cmp(&b.record.id))
        });
        for elite in ordered.iter().take(10) {
            out.push_str(&format!(
                "- task {} utility {:.6} config {}\n",
                elite.record.id, elite.utility, elite.record.config
            ));
            if let Some(report) = &elite.record.results {
                for (metric, cmp) in &report.metrics {
                    let delta = cmp
                        .relative_delta_pct
                        .map_or("undefined".to_string(), |d| format!("{d:+.4}%"));
                    out.push_str(&format!(
                        "    {metric}: {delta} (p={:.4})\n",
                        cmp.p_value
                    ));
                }
            }
        }
    }
    out.push_str("\n## Output Instructions\n");
    out.push_str(&format!(
        "Respond with a JSON array of exactly {batch_size} objects. Each object \
must have a \"config\" field (object mapping every parameter name to a number \
within bounds) and an \"explanation\" field (nonempty string justifying the \
shift). No other fields, no prose outside the array.\n"
    ));
    if !extra_args.is_empty() {
        out.push_str("\n## Extra Arguments\n");
        for arg in extra_args {
            out.push_str(arg);
            out.push('\n');
        }
    }
    out
}

/// Deterministic critic prompt over a set of proposals.
pub fn render_critic_prompt(
    skill: &Skill,
    proposals: &[(SystemConfig, String)],
    history_digest: &str,
) -> String {
    let mut out = String::new();
    out.push_str("## Review Task\n");
    out.push_str(
        "Check each proposed configuration against the format requirement, the \
guardrails, the instruction constraints, and the known historical failure \
cases below. Reject anything unsafe or redundant and explain every verdict.\n",
    );
    out.push_str("\n## Task Context\n");
    out.push_str(&skill.task_context);
    out.push_str("\n\n## Constraints\n");
    for (name, spec) in &skill.requirement.search_space.params {
        out.push_str(&format!("- {name} in [{}, {}]\n", spec.lower, spec.upper));
    }
    for g in &skill.north_star.guardrails {
        out.push_str(&format!(
            "- guardrail: {} ({:?}) baseline {}\n",
            g.metric, g.direction, g.baseline
        ));
    }
    out.push_str("\n## Proposals\n");
    for (i, (config, explanation)) in proposals.iter().enumerate() {
        out.push_str(&format!(
            "{}. config {} explanation: {}\n",
            i + 1,
            config.canonical_string(),
            explanation
        ));
    }
    if !history_digest.is_empty() {
        out.push_str("\n## Historical Failures\n");
        out.push_str(history_digest);
        out.push('\n');
    }
    out.push_str(
        "\n## Output Instructions\nRespond with a JSON array of {\"index\": <1-based>, \
\"verdict\": \"approve\"|\"reject\", \"comment\": <string>} objects, one per proposal.\n",
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{Direction, Guardrail, PrimaryMetric};

    pub(crate) fn space() -> SearchSpace {
        SearchSpace {
            params: [
                (
                    "pre.w_pctr".to_string(),
                    ParamSpec {
                        lower: 0.0,
                        upper: 2.0,
                        kind: ParamKind::Continuous,
                        scale: ParamScale::Linear,
                        sensitive: true,
                    },
                ),
                (
                    "pre.K1".to_string(),
                    ParamSpec {
                        lower: 4.0,
                        upper: 16.0,
                        kind: ParamKind::Integer,
                        scale: ParamScale::Linear,
                        sensitive: false,
                    },
                ),
            ]
            .into_iter()
            .collect(),
        }
    }

    pub(crate) fn skill() -> Skill {
        Skill {
            name: "pre-fusion".into(),
            version: 1,
            task_context: "Tune pre-ranking fusion weights.".into(),
            requirement: Requirement {
                search_space: space(),
                output_schema: "config-batch-v1".into(),
                infra_constraints: "none".into(),
            },
            north_star: NorthStar {
                primary: vec![PrimaryMetric {
                    metric: "engagement1".into(),
                    direction: Direction::Increase,
                }],
                guardrails: vec![Guardrail {
                    metric: "diversity".into(),
                    direction: Direction::Increase,
                    baseline: 0.2,
                }],
            },
            initial_config: SystemConfig::from_pairs([("pre.w_pctr", 1.0), ("pre.K1", 8.0)]),
            domain_knowledge: vec![],
            tools: vec![ToolDescriptor {
                id: "simulated-platform".into(),
                description: "paired simulated A/B experiments".into(),
            }],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = skill();
        let path = Skill::version_path(dir.path(), &s.name, s.version);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        save_skill(&s, &path).unwrap();
        assert_eq!(load_skill(&path).unwrap(), s);
    }

    #[test]
    fn initial_config_out_of_bounds_names_parameter() {
        let mut s = skill();
        s.initial_config.params.insert("pre.w_pctr".into(), 5.0);
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("pre.w_pctr"), "{err}");
    }

    #[test]
    fn primary_guardrail_overlap_rejected() {
        let mut s = skill();
        s.north_star.guardrails.push(Guardrail {
            metric: "engagement1".into(),
            direction: Direction::Increase,
            baseline: 0.0,
        });
        assert!(s.validate().is_err());
    }

    #[test]
    fn rule_must_reference_known_parameter() {
        let mut s = skill();
        s.domain_knowledge.push(KnowledgeEntry {
            text: "cap the penalty".into(),
            rule: Some(Rule::LeThreshold {
                parameter: "re.ghost".into(),
                threshold: 0.5,
            }),
            provenance: Provenance::Authored,
            created_at: "2024-01-01T00:00:00+00:00".into(),
            confidence: 0.9,
        });
        assert!(s.validate().is_err());
    }

    #[test]
    fn log_scale_needs_positive_lower() {
        let mut s = skill();
        s.requirement.search_space.params.insert(
            "rank.tau".into(),
            ParamSpec {
                lower: 0.0,
                upper: 1.0,
                kind: ParamKind::Continuous,
                scale: ParamScale::Log,
                sensitive: false,
            },
        );
        assert!(s.validate().is_err());
    }

    #[test]
    fn extra_config_parameter_rejected() {
        let s = space();
        let mut c = SystemConfig::from_pairs([("pre.w_pctr", 1.0), ("pre.K1", 8.0)]);
        c.params.insert("bogus".into(), 1.0);
        assert!(s.validate_config(&c).is_err());
    }

    #[test]
    fn relative_linf_distance() {
        let s = space();
        let a = SystemConfig::from_pairs([("pre.w_pctr", 1.0), ("pre.K1", 8.0)]);
        let b = SystemConfig::from_pairs([("pre.w_pctr", 1.5), ("pre.K1", 10.0)]);
        // max(0.5/2, 2/12) = 0.25
        assert!((s.relative_linf(&a, &b) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn actor_prompt_deterministic_and_structured() {
        let s = skill();
        let p1 = render_actor_prompt(&s, &[], 3, &["log to /tmp/run1".into()]);
        let p2 = render_actor_prompt(&s, &[], 3, &["log to /tmp/run1".into()]);
        assert_eq!(p1, p2);
        assert!(p1.contains("no prior experiments"));
        assert!(p1.contains("exactly 3 objects"));
        assert!(p1.contains("log to /tmp/run1"));
        let sections = ["## Task Context", "## Parameters", "## North Star Metrics",
            "## Domain Knowledge", "## Elite History", "## Output Instructions"];
        let mut last = 0;
        for sec in sections {
            let pos = p1.find(sec).unwrap_or_else(|| panic!("missing {sec}"));
            assert!(pos >= last, "section {sec} out of order");
            last = pos;
        }
    }

    #[test]
    fn critic_prompt_lists_every_proposal() {
        let s = skill();
        let proposals = vec![
            (SystemConfig::from_pairs([("pre.w_pctr", 0.4)]), "lower weight".to_string()),
            (SystemConfig::from_pairs([("pre.w_pctr", 1.4)]), "raise weight".to_string()),
        ];
        let p = render_critic_prompt(&s, &proposals, "task t3 breached diversity");
        for (config, _) in &proposals {
            assert!(p.contains(&config.canonical_string()));
        }
        assert!(p.contains("## Historical Failures"));
        let empty = render_critic_prompt(&s, &proposals, "");
        assert!(!empty.contains("## Historical Failures"));
    }

    #[test]
    fn threshold_rules_detect_violations() {
        let le = Rule::LeThreshold {
            parameter: "pre.w_pctr".into(),
            threshold: 1.0,
        };
        let hi = SystemConfig::from_pairs([("pre.w_pctr", 1.5)]);
        let lo = SystemConfig::from_pairs([("pre.w_pctr", 0.5)]);
        assert!(le.violated_by(&hi));
        assert!(!le.violated_by(&lo));
        let mono = Rule::MonotoneUpHurts {
            parameter: "pre.w_pctr".into(),
            metric: "engagement1".into(),
        };
        assert!(!mono.violated_by(&hi), "monotone rules are advisory");
    }
}
