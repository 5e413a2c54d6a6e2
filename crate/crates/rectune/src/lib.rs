//! Agentic configuration tuning for multi-stage ranking pipelines.
//!
//! The crate couples a deterministic three-stage pipeline simulator (a real,
//! non-differentiable objective over a joint configuration vector) with a
//! five-agent optimization loop: an actor proposes configurations, a critic
//! filters them, an online agent runs paired simulated A/B experiments, an
//! insight agent learns parameter sensitivities from history, and a skill
//! agent evolves the versioned task definition that parameterizes them all.
//!
//! Start with the runnable examples (`cargo run --example full_loop`) or the
//! `rectune` binary for the operator workflow.

pub mod abtest;
pub mod agents;
pub mod bench;
pub mod cli;
pub mod driver;
pub mod llmclient;
pub mod memory;
pub mod objective;
pub mod rng;
pub mod scenario;
pub mod simpipeline;
pub mod skillhub;

pub use abtest::{ExperimentPlatform, ExperimentSpec, MetricReport, SimulatedPlatform};
pub use memory::{EliteArchive, MemoryStore, TaskRecord, TaskStatus};
pub use objective::{Direction, NorthStar, UtilityOutcome};
pub use scenario::Scenario;
pub use simpipeline::{Simulator, SystemConfig};
pub use skillhub::{SearchSpace, Skill};
