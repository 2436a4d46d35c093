//! k-nearest-neighbour retrieval over a labelled memory, trust-weighted
//! gating between a frozen base predictor and the retriever, discordance
//! scoring, and a seeded Monte Carlo harness that checks the large-sample
//! behaviour of all of the above against closed-form targets.
//!
//! Labels are 0-based in the API. Files and config-facing types use 1-based
//! labels.

pub mod config;
pub mod discordance;
pub mod error;
pub mod experiments;
pub mod gating;
pub mod memory;
pub mod retrieval;
pub mod scenario;
pub mod seed;
pub mod simplex;

pub use config::{run_config, RunConfig, SweepEntry};
pub use discordance::{
    asymptotic_target, classify_regime, delta_h, hdisc, realized_delta_h, AsymptoticTarget,
    DiscordanceRecord, Regime,
};
pub use error::{Error, Result};
pub use experiments::{ExperimentKind, ExperimentReport, SweepConfig};
pub use gating::{hard_gate, local_objective, mixture, soft_gate, GateDecision, GateInputs, GateMode};
pub use memory::{MemoryStore, NeighborSet, Norm};
pub use retrieval::{retriever_distribution, trust_weight, RetrievalView};
pub use scenario::{Scenario, ScenarioSpec};
pub use simplex::{cross_entropy, l1_distance, modal_label, tv_distance, ExtReal, ProbVec};
