//! Scenario documents (`.fairmas.json`) and system summaries.
//!
//! A document is canonical JSON: object keys sorted, arrays in index order,
//! numbers in shortest round-trip form, zero rewards omitted. Loading a saved
//! document reproduces the system exactly.

mod traffic;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Dynamics, EngineError};
use crate::model::{
    validate_system, ActionId, AgentSpec, AttributeAssignment, ProfileLiteral, RewardTable, StateId, SystemSpec,
    TransitionEntry, TransitionSpec, Violation,
};

pub use traffic::{build_traffic, Car, Driver, SpeedTier, TrafficParams, HIGH_SPEED, HUMAN_DRIVEN};

pub const SCHEMA_VERSION: &str = "1";

/// Conventional file extension for scenario documents.
pub const FILE_EXTENSION: &str = ".fairmas.json";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("PARSE_ERROR at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("UNKNOWN_KEY: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("UNSUPPORTED_SCHEMA_VERSION: {0:?}")]
    UnsupportedSchemaVersion(String),
    #[error("UNKNOWN_ATTRIBUTE: {0:?}")]
    UnknownAttribute(String),
    #[error("VALIDATION_FAILED: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    ValidationFailed(Vec<Violation>),
    #[error("INVALID_PARAMS: {0}")]
    InvalidParams(String),
}

impl ScenarioError {
    pub fn code(&self) -> &'static str {
        match self {
            ScenarioError::Parse { .. } => "PARSE_ERROR",
            ScenarioError::UnknownKeys(_) => "UNKNOWN_KEY",
            ScenarioError::UnsupportedSchemaVersion(_) => "UNSUPPORTED_SCHEMA_VERSION",
            ScenarioError::UnknownAttribute(_) => "UNKNOWN_ATTRIBUTE",
            ScenarioError::ValidationFailed(_) => "VALIDATION_FAILED",
            ScenarioError::InvalidParams(_) => "INVALID_PARAMS",
        }
    }

    /// True for errors in the document's syntax or shape.
    pub fn is_parse_error(&self) -> bool {
        matches!(
            self,
            ScenarioError::Parse { .. } | ScenarioError::UnknownKeys(_) | ScenarioError::UnsupportedSchemaVersion(_)
        )
    }
}

impl From<serde_json::Error> for ScenarioError {
    fn from(e: serde_json::Error) -> Self {
        ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDocument {
    pub schema_version: String,
    pub num_states: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_names: Option<Vec<String>>,
    pub start: usize,
    pub actions: Vec<String>,
    pub attributes: Vec<String>,
    pub protected: Vec<String>,
    pub agents: Vec<AgentDocument>,
    pub transitions: TransitionsDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub attributes: Vec<u8>,
    pub actions: Vec<usize>,
    /// One row per state, one column per entry of `actions`.
    pub policy: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rewards: Vec<RewardDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardDocument {
    pub from: usize,
    pub to: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionsDocument {
    pub attribute_sensitive: bool,
    pub entries: Vec<EntryDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryDocument {
    pub state: usize,
    pub joint: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub when: Vec<LiteralDocument>,
    pub next: Vec<NextDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiteralDocument {
    pub agent: usize,
    pub attribute: String,
    pub value: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextDocument {
    pub state: usize,
    pub p: f64,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<serde_json::Value>,
}

/// Parses a document. With `strict`, unknown keys are an error.
pub fn parse_document(text: &str, strict: bool) -> Result<ScenarioDocument, ScenarioError> {
    let probe: VersionProbe = serde_json::from_str(text)?;
    match probe.schema_version {
        Some(serde_json::Value::String(v)) if v == SCHEMA_VERSION => {}
        Some(other) => {
            let shown = other.as_str().map_or_else(|| other.to_string(), str::to_string);
            return Err(ScenarioError::UnsupportedSchemaVersion(shown));
        }
        None => {
            return Err(ScenarioError::Parse {
                line: 1,
                column: 1,
                message: "missing field `schema_version`".into(),
            })
        }
    }
    let mut de = serde_json::Deserializer::from_str(text);
    let mut unknown = Vec::new();
    let doc: ScenarioDocument = serde_ignored::deserialize(&mut de, |path| unknown.push(path.to_string()))?;
    de.end()?;
    if strict && !unknown.is_empty() {
        return Err(ScenarioError::UnknownKeys(unknown));
    }
    Ok(doc)
}

fn attribute_by_name(names: &[String], name: &str) -> Result<usize, ScenarioError> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| ScenarioError::UnknownAttribute(name.to_string()))
}

impl ScenarioDocument {
    /// Maps the document onto a system without validating it.
    pub fn to_spec(&self) -> Result<SystemSpec, ScenarioError> {
        let protected = self
            .protected
            .iter()
            .map(|name| attribute_by_name(&self.attributes, name))
            .collect::<Result<BTreeSet<usize>, _>>()?;
        let agents = self
            .agents
            .iter()
            .map(|a| AgentSpec {
                name: a.name.clone(),
                attributes: AttributeAssignment::new(a.attributes.clone()),
                actions: a.actions.iter().map(|&i| ActionId(i)).collect(),
                policy: a.policy.clone(),
                rewards: a
                    .rewards
                    .iter()
                    .map(|r| (StateId(r.from), StateId(r.to), r.value))
                    .collect::<RewardTable>(),
            })
            .collect();
        let entries = self
            .transitions
            .entries
            .iter()
            .map(|e| {
                let condition = e
                    .when
                    .iter()
                    .map(|lit| {
                        Ok(ProfileLiteral {
                            agent: lit.agent,
                            attribute: attribute_by_name(&self.attributes, &lit.attribute)?,
                            value: lit.value,
                        })
                    })
                    .collect::<Result<Vec<_>, ScenarioError>>()?;
                Ok(TransitionEntry {
                    state: StateId(e.state),
                    joint: e.joint.iter().map(|&a| ActionId(a)).collect(),
                    condition,
                    next: e.next.iter().map(|n| (StateId(n.state), n.p)).collect(),
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        Ok(SystemSpec {
            num_states: self.num_states,
            state_names: self.state_names.clone(),
            start: StateId(self.start),
            action_names: self.actions.clone(),
            attribute_names: self.attributes.clone(),
            protected,
            agents,
            transition: TransitionSpec {
                attribute_sensitive: self.transitions.attribute_sensitive,
                entries,
            },
        })
    }

    pub fn from_spec(spec: &SystemSpec) -> Self {
        let attr_name = |i: usize| spec.attribute_names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            num_states: spec.num_states,
            state_names: spec.state_names.clone(),
            start: spec.start.0,
            actions: spec.action_names.clone(),
            attributes: spec.attribute_names.clone(),
            protected: spec.protected.iter().map(|&i| attr_name(i)).collect(),
            agents: spec
                .agents
                .iter()
                .map(|a| AgentDocument {
                    name: a.name.clone(),
                    attributes: a.attributes.bits().to_vec(),
                    actions: a.actions.iter().map(|x| x.0).collect(),
                    policy: a.policy.clone(),
                    rewards: a
                        .rewards
                        .iter()
                        .map(|(from, to, value)| RewardDocument {
                            from: from.0,
                            to: to.0,
                            value,
                        })
                        .collect(),
                })
                .collect(),
            transitions: TransitionsDocument {
                attribute_sensitive: spec.transition.attribute_sensitive,
                entries: spec
                    .transition
                    .entries
                    .iter()
                    .map(|e| EntryDocument {
                        state: e.state.0,
                        joint: e.joint.iter().map(|a| a.0).collect(),
                        when: e
                            .condition
                            .iter()
                            .map(|lit| LiteralDocument {
                                agent: lit.agent,
                                attribute: attr_name(lit.attribute),
                                value: lit.value,
                            })
                            .collect(),
                        next: e.next.iter().map(|&(s, p)| NextDocument { state: s.0, p }).collect(),
                    })
                    .collect(),
            },
        }
    }
}

/// Parses and validates a scenario document.
pub fn load_system(text: &str, strict: bool) -> Result<SystemSpec, ScenarioError> {
    let spec = parse_document(text, strict)?.to_spec()?;
    let violations = validate_system(&spec);
    if !violations.is_empty() {
        return Err(ScenarioError::ValidationFailed(violations));
    }
    Ok(spec)
}

/// Canonical text of any serializable value: sorted keys, two-space
/// indentation, trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let tree = serde_json::to_value(value).expect("scenario types serialize to JSON");
    let mut text = serde_json::to_string_pretty(&tree).expect("JSON values print");
    text.push('\n');
    text
}

/// Canonical document text for `spec`.
pub fn save_system(spec: &SystemSpec) -> String {
    canonical_json(&ScenarioDocument::from_spec(spec))
}

/// Run count at the summary horizon: `b^H` or an overflow marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunEstimate {
    Count(u64),
    Overflow,
}

impl Serialize for RunEstimate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            RunEstimate::Count(n) => s.serialize_u64(*n),
            RunEstimate::Overflow => s.serialize_str("OVERFLOW"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub states: usize,
    pub actions: usize,
    pub agents: usize,
    pub attributes: usize,
    pub protected: Vec<String>,
    pub attribute_sensitive: bool,
    /// Largest number of (joint action, next state) branches from one state.
    pub branching: usize,
    pub horizon: usize,
    pub estimated_runs: RunEstimate,
}

pub fn estimate_runs(branching: usize, horizon: usize) -> RunEstimate {
    u64::try_from(branching)
        .ok()
        .and_then(|b| u32::try_from(horizon).ok().and_then(|h| b.checked_pow(h)))
        .map_or(RunEstimate::Overflow, RunEstimate::Count)
}

/// Counts, protected names, sensitivity flag, and the run estimate at `horizon`.
pub fn describe(spec: &SystemSpec, horizon: usize) -> Result<Summary, EngineError> {
    let dynamics = Dynamics::new(spec)?;
    let branching = dynamics.max_branching();
    Ok(Summary {
        states: spec.num_states,
        actions: spec.num_actions(),
        agents: spec.num_agents(),
        attributes: spec.num_attributes(),
        protected: spec.protected.iter().map(|&i| spec.attribute_names[i].clone()).collect(),
        attribute_sensitive: spec.transition.attribute_sensitive,
        branching,
        horizon,
        estimated_runs: estimate_runs(branching, horizon),
    })
}
