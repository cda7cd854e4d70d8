//! Multi-agent system simulation with protected-attribute fairness metrics.
//!
//! The crate models a system of self-interested agents acting in a
//! stochastic environment, computes each agent's expected reward over a fixed
//! horizon (exactly or by Monte Carlo), and measures demographic parity,
//! counterfactual fairness, and conditional statistical parity with respect
//! to a protected attribute. An optimizer searches environment
//! configurations for lower measured unfairness.

pub mod engine;
pub mod fixtures;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod report;
pub mod scenario;
pub mod stream;

pub use engine::{Dynamics, EngineError, EstimatorResult, DEFAULT_ENUM_CAP};
pub use model::{
    attribute_profile, matches_except, validate_system, ActionId, AgentSpec, AttributeAssignment, ProfileLiteral,
    RewardTable, Run, StateId, SystemSpec, TransitionEntry, TransitionSpec, Violation, ViolationCode,
};
