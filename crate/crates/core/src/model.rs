//! System, agent, attribute, and run data model.
//!
//! A [`SystemSpec`] is the tuple (states, start, actions, population,
//! attributes, protected attributes, transformer). Every other module reads
//! these types; nothing mutates a spec after it has been validated.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used for every "sums to 1" check.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Index into the state set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub usize);

/// Index into the global action set. Index 0 is always the null action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

pub const NULL_ACTION: ActionId = ActionId(0);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// Which attributes hold for one agent, one 0/1 entry per declared attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeAssignment(pub Vec<u8>);

impl AttributeAssignment {
    pub fn new(bits: Vec<u8>) -> Self {
        Self(bits)
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self(bits.iter().map(|&b| u8::from(b)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn get(&self, attribute: usize) -> Option<u8> {
        self.0.get(attribute).copied()
    }

    /// True when `attribute` is present and set to 1.
    pub fn holds(&self, attribute: usize) -> bool {
        self.get(attribute) == Some(1)
    }

    /// Copy with the bit for `attribute` flipped (0 <-> 1).
    pub fn flipped(&self, attribute: usize) -> Self {
        let mut bits = self.0.clone();
        if let Some(b) = bits.get_mut(attribute) {
            *b = if *b == 1 { 0 } else { 1 };
        }
        Self(bits)
    }
}

/// Sparse reward function over ordered state pairs; unlisted pairs are 0.
///
/// Zero values are never stored, so two tables describing the same function
/// compare equal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardTable(BTreeMap<(StateId, StateId), f64>);

impl RewardTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, from: StateId, to: StateId) -> f64 {
        self.0.get(&(from, to)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, from: StateId, to: StateId, value: f64) {
        if value == 0.0 {
            self.0.remove(&(from, to));
        } else {
            self.0.insert((from, to), value);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateId, StateId, f64)> + '_ {
        self.0.iter().map(|(&(a, b), &v)| (a, b, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = Self::new();
        for (a, b, v) in self.iter() {
            out.set(a, b, v * factor);
        }
        out
    }
}

impl FromIterator<(StateId, StateId, f64)> for RewardTable {
    fn from_iter<T: IntoIterator<Item = (StateId, StateId, f64)>>(iter: T) -> Self {
        let mut table = Self::new();
        for (a, b, v) in iter {
            table.set(a, b, v);
        }
        table
    }
}

/// One member of the population.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub name: Option<String>,
    pub attributes: AttributeAssignment,
    /// The agent's action subset; must contain [`NULL_ACTION`].
    pub actions: Vec<ActionId>,
    /// `policy[state][k]` is the probability of choosing `actions[k]` in `state`.
    pub policy: Vec<Vec<f64>>,
    pub rewards: RewardTable,
}

impl AgentSpec {
    /// Probability that this agent picks `action` in `state`; 0 outside its action set.
    pub fn action_probability(&self, state: StateId, action: ActionId) -> f64 {
        let Some(row) = self.policy.get(state.0) else {
            return 0.0;
        };
        self.actions
            .iter()
            .position(|&a| a == action)
            .and_then(|k| row.get(k).copied())
            .unwrap_or(0.0)
    }

    /// Actions with positive probability in `state`, ascending by action id.
    pub fn support(&self, state: StateId) -> Vec<(ActionId, f64)> {
        let Some(row) = self.policy.get(state.0) else {
            return Vec::new();
        };
        let mut out: Vec<(ActionId, f64)> = self
            .actions
            .iter()
            .zip(row)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&a, &p)| (a, p))
            .collect();
        out.sort_by_key(|&(a, _)| a);
        out
    }
}

/// One literal of a population attribute-profile condition:
/// "agent `agent` has attribute `attribute` equal to `value`".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProfileLiteral {
    pub agent: usize,
    pub attribute: usize,
    pub value: u8,
}

/// A transformer row: in `state`, under `joint`, and when every literal of
/// `condition` holds for the population, the next state is drawn from `next`.
/// An empty condition matches every profile.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEntry {
    pub state: StateId,
    pub joint: Vec<ActionId>,
    pub condition: Vec<ProfileLiteral>,
    pub next: Vec<(StateId, f64)>,
}

impl TransitionEntry {
    pub fn matches_profile(&self, profile: &[AttributeAssignment]) -> bool {
        self.condition.iter().all(|lit| {
            profile
                .get(lit.agent)
                .and_then(|row| row.get(lit.attribute))
                .is_some_and(|v| v == lit.value)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransitionSpec {
    pub attribute_sensitive: bool,
    pub entries: Vec<TransitionEntry>,
}

/// The full multi-agent system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub num_states: usize,
    pub state_names: Option<Vec<String>>,
    pub start: StateId,
    pub action_names: Vec<String>,
    pub attribute_names: Vec<String>,
    pub protected: BTreeSet<usize>,
    pub agents: Vec<AgentSpec>,
    pub transition: TransitionSpec,
}

impl SystemSpec {
    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn num_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|n| n == name)
    }

    pub fn is_protected(&self, attribute: usize) -> bool {
        self.protected.contains(&attribute)
    }

    pub fn state_name(&self, state: StateId) -> String {
        self.state_names
            .as_ref()
            .and_then(|names| names.get(state.0).cloned())
            .unwrap_or_else(|| state.to_string())
    }

    /// Population attribute profile as owned assignments (one per agent).
    pub fn profile(&self) -> Vec<AttributeAssignment> {
        self.agents.iter().map(|a| a.attributes.clone()).collect()
    }
}

/// A bounded trajectory `e0, joint_1, e1, ..., joint_H, e_H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub states: Vec<StateId>,
    pub joint_actions: Vec<Vec<ActionId>>,
    pub probability: f64,
}

impl Run {
    pub fn horizon(&self) -> usize {
        self.joint_actions.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    NoStates,
    NoActions,
    NoAgents,
    NoAttributes,
    StartOutOfRange,
    StateNamesLength,
    ProtectedEmpty,
    ProtectedOutOfRange,
    ProtectedNotStrictSubset,
    AttributeLength,
    AttributeNotBinary,
    ActionOutOfRange,
    DuplicateAction,
    NullActionMissing,
    PolicyShape,
    PolicyProbabilityOutOfRange,
    PolicyNotNormalized,
    RewardStateOutOfRange,
    RewardNotFinite,
    TransitionStateOutOfRange,
    TransitionArity,
    TransitionActionOutOfRange,
    TransitionProbabilityOutOfRange,
    TransitionDuplicateTarget,
    TransitionNotNormalized,
    ProfileConditionNotAllowed,
    ProfileConditionOutOfRange,
    TransitionMissing,
    TransitionAmbiguous,
}

impl ViolationCode {
    pub fn as_str(&self) -> &'static str {
        use ViolationCode::*;
        match self {
            NoStates => "NO_STATES",
            NoActions => "NO_ACTIONS",
            NoAgents => "NO_AGENTS",
            NoAttributes => "NO_ATTRIBUTES",
            StartOutOfRange => "START_OUT_OF_RANGE",
            StateNamesLength => "STATE_NAMES_LENGTH",
            ProtectedEmpty => "PROTECTED_EMPTY",
            ProtectedOutOfRange => "PROTECTED_OUT_OF_RANGE",
            ProtectedNotStrictSubset => "PROTECTED_NOT_STRICT_SUBSET",
            AttributeLength => "ATTRIBUTE_LENGTH",
            AttributeNotBinary => "ATTRIBUTE_NOT_BINARY",
            ActionOutOfRange => "ACTION_OUT_OF_RANGE",
            DuplicateAction => "DUPLICATE_ACTION",
            NullActionMissing => "NULL_ACTION_MISSING",
            PolicyShape => "POLICY_SHAPE",
            PolicyProbabilityOutOfRange => "POLICY_PROBABILITY_OUT_OF_RANGE",
            PolicyNotNormalized => "POLICY_NOT_NORMALIZED",
            RewardStateOutOfRange => "REWARD_STATE_OUT_OF_RANGE",
            RewardNotFinite => "REWARD_NOT_FINITE",
            TransitionStateOutOfRange => "TRANSITION_STATE_OUT_OF_RANGE",
            TransitionArity => "TRANSITION_ARITY",
            TransitionActionOutOfRange => "TRANSITION_ACTION_OUT_OF_RANGE",
            TransitionProbabilityOutOfRange => "TRANSITION_PROBABILITY_OUT_OF_RANGE",
            TransitionDuplicateTarget => "TRANSITION_DUPLICATE_TARGET",
            TransitionNotNormalized => "TRANSITION_NOT_NORMALIZED",
            ProfileConditionNotAllowed => "PROFILE_CONDITION_NOT_ALLOWED",
            ProfileConditionOutOfRange => "PROFILE_CONDITION_OUT_OF_RANGE",
            TransitionMissing => "TRANSITION_MISSING",
            TransitionAmbiguous => "TRANSITION_AMBIGUOUS",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a violation was found. Absent fields do not apply.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub agent: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub state: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub entry: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
    pub location: Location,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("INDEX_OUT_OF_RANGE: {what} index {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::IndexOutOfRange { .. } => "INDEX_OUT_OF_RANGE",
        }
    }
}

struct Collector(Vec<Violation>);

impl Collector {
    fn push(&mut self, code: ViolationCode, location: Location, message: String) {
        self.0.push(Violation {
            code,
            message,
            location,
        });
    }
}

fn at_agent(agent: usize) -> Location {
    Location {
        agent: Some(agent),
        ..Location::default()
    }
}

fn at_agent_state(agent: usize, state: usize) -> Location {
    Location {
        agent: Some(agent),
        state: Some(state),
        entry: None,
    }
}

fn at_entry(entry: usize, state: Option<usize>) -> Location {
    Location {
        agent: None,
        state,
        entry: Some(entry),
    }
}

fn normalized(sum: f64) -> bool {
    (sum - 1.0).abs() <= NORMALIZATION_TOLERANCE
}

/// Checks every structural invariant of `spec`. An empty list means valid.
pub fn validate_system(spec: &SystemSpec) -> Vec<Violation> {
    let mut out = Collector(Vec::new());
    let n_states = spec.num_states;
    let n_actions = spec.num_actions();
    let n_attrs = spec.num_attributes();

    if n_states == 0 {
        out.push(ViolationCode::NoStates, Location::default(), "state set is empty".into());
    }
    if spec.start.0 >= n_states {
        out.push(
            ViolationCode::StartOutOfRange,
            Location {
                state: Some(spec.start.0),
                ..Location::default()
            },
            format!("start state {} not below {}", spec.start.0, n_states),
        );
    }
    if let Some(names) = &spec.state_names {
        if names.len() != n_states {
            out.push(
                ViolationCode::StateNamesLength,
                Location::default(),
                format!("{} state names for {} states", names.len(), n_states),
            );
        }
    }
    if n_actions == 0 {
        out.push(
            ViolationCode::NoActions,
            Location::default(),
            "action set is empty (index 0 must be the null action)".into(),
        );
    }
    if spec.agents.is_empty() {
        out.push(ViolationCode::NoAgents, Location::default(), "population is empty".into());
    }
    if n_attrs == 0 {
        out.push(ViolationCode::NoAttributes, Location::default(), "attribute set is empty".into());
    }
    if spec.protected.is_empty() {
        out.push(
            ViolationCode::ProtectedEmpty,
            Location::default(),
            "no protected attribute declared".into(),
        );
    }
    for &p in &spec.protected {
        if p >= n_attrs {
            out.push(
                ViolationCode::ProtectedOutOfRange,
                Location::default(),
                format!("protected attribute index {p} not below {n_attrs}"),
            );
        }
    }
    if n_attrs > 0 && spec.protected.iter().filter(|&&p| p < n_attrs).count() == n_attrs {
        out.push(
            ViolationCode::ProtectedNotStrictSubset,
            Location::default(),
            "every attribute is protected; protected set must be a strict subset".into(),
        );
    }

    for (x, agent) in spec.agents.iter().enumerate() {
        validate_agent(&mut out, x, agent, n_states, n_actions, n_attrs);
    }

    validate_transitions(&mut out, spec);
    out.0
}

fn validate_agent(
    out: &mut Collector,
    x: usize,
    agent: &AgentSpec,
    n_states: usize,
    n_actions: usize,
    n_attrs: usize,
) {
    if agent.attributes.len() != n_attrs {
        out.push(
            ViolationCode::AttributeLength,
            at_agent(x),
            format!("{} attribute bits for {} attributes", agent.attributes.len(), n_attrs),
        );
    }
    for (i, &bit) in agent.attributes.bits().iter().enumerate() {
        if bit > 1 {
            out.push(
                ViolationCode::AttributeNotBinary,
                at_agent(x),
                format!("attribute {i} has value {bit}, expected 0 or 1"),
            );
        }
    }

    let mut seen = BTreeSet::new();
    for &a in &agent.actions {
        if a.0 >= n_actions {
            out.push(
                ViolationCode::ActionOutOfRange,
                at_agent(x),
                format!("action {} not below {}", a.0, n_actions),
            );
        }
        if !seen.insert(a) {
            out.push(
                ViolationCode::DuplicateAction,
                at_agent(x),
                format!("action {} listed twice", a.0),
            );
        }
    }
    if !agent.actions.contains(&NULL_ACTION) {
        out.push(
            ViolationCode::NullActionMissing,
            at_agent(x),
            "null action (index 0) missing from action subset".into(),
        );
    }

    if agent.policy.len() != n_states {
        out.push(
            ViolationCode::PolicyShape,
            at_agent(x),
            format!("policy has {} rows for {} states", agent.policy.len(), n_states),
        );
    }
    for (s, row) in agent.policy.iter().enumerate() {
        if row.len() != agent.actions.len() {
            out.push(
                ViolationCode::PolicyShape,
                at_agent_state(x, s),
                format!("policy row has {} entries for {} actions", row.len(), agent.actions.len()),
            );
            continue;
        }
        if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
            out.push(
                ViolationCode::PolicyProbabilityOutOfRange,
                at_agent_state(x, s),
                "policy probability outside [0, 1]".into(),
            );
            continue;
        }
        let sum: f64 = row.iter().sum();
        if !normalized(sum) {
            out.push(
                ViolationCode::PolicyNotNormalized,
                at_agent_state(x, s),
                format!("policy row sums to {sum}"),
            );
        }
    }

    for (from, to, v) in agent.rewards.iter() {
        if from.0 >= n_states || to.0 >= n_states {
            out.push(
                ViolationCode::RewardStateOutOfRange,
                at_agent(x),
                format!("reward pair ({}, {}) references a missing state", from.0, to.0),
            );
        }
        if !v.is_finite() {
            out.push(
                ViolationCode::RewardNotFinite,
                at_agent(x),
                format!("reward for ({}, {}) is not finite", from.0, to.0),
            );
        }
    }
}

fn validate_transitions(out: &mut Collector, spec: &SystemSpec) {
    let n = spec.num_agents();
    let n_states = spec.num_states;
    let n_actions = spec.num_actions();
    let n_attrs = spec.num_attributes();
    let mut well_formed = vec![true; spec.transition.entries.len()];

    for (i, entry) in spec.transition.entries.iter().enumerate() {
        let loc = || at_entry(i, Some(entry.state.0));
        if entry.state.0 >= n_states {
            out.push(
                ViolationCode::TransitionStateOutOfRange,
                loc(),
                format!("entry state {} not below {}", entry.state.0, n_states),
            );
            well_formed[i] = false;
        }
        if entry.joint.len() != n {
            out.push(
                ViolationCode::TransitionArity,
                loc(),
                format!("joint action has {} components for {} agents", entry.joint.len(), n),
            );
            well_formed[i] = false;
        }
        if entry.joint.iter().any(|a| a.0 >= n_actions) {
            out.push(
                ViolationCode::TransitionActionOutOfRange,
                loc(),
                "joint action references a missing action".into(),
            );
            well_formed[i] = false;
        }
        if !entry.condition.is_empty() && !spec.transition.attribute_sensitive {
            out.push(
                ViolationCode::ProfileConditionNotAllowed,
                loc(),
                "profile condition on an attribute-insensitive transformer".into(),
            );
        }
        for lit in &entry.condition {
            if lit.agent >= n || lit.attribute >= n_attrs || lit.value > 1 {
                out.push(
                    ViolationCode::ProfileConditionOutOfRange,
                    loc(),
                    format!(
                        "condition literal (agent {}, attribute {}, value {}) is out of range",
                        lit.agent, lit.attribute, lit.value
                    ),
                );
                well_formed[i] = false;
            }
        }
        let mut targets = BTreeSet::new();
        let mut bad_prob = false;
        for &(s, p) in &entry.next {
            if s.0 >= n_states {
                out.push(
                    ViolationCode::TransitionStateOutOfRange,
                    loc(),
                    format!("next state {} not below {}", s.0, n_states),
                );
                well_formed[i] = false;
            }
            if !(0.0..=1.0).contains(&p) {
                bad_prob = true;
            }
            if !targets.insert(s) {
                out.push(
                    ViolationCode::TransitionDuplicateTarget,
                    loc(),
                    format!("next state {} listed twice", s.0),
                );
            }
        }
        if bad_prob {
            out.push(
                ViolationCode::TransitionProbabilityOutOfRange,
                loc(),
                "transition probability outside [0, 1]".into(),
            );
        } else {
            let sum: f64 = entry.next.iter().map(|&(_, p)| p).sum();
            if !normalized(sum) {
                out.push(
                    ViolationCode::TransitionNotNormalized,
                    loc(),
                    format!("next-state distribution sums to {sum}"),
                );
            }
        }
    }

    // Coverage is only meaningful once the agents themselves are well formed.
    let agents_ok = spec.agents.iter().all(|a| {
        a.policy.len() == n_states
            && a.policy.iter().all(|row| row.len() == a.actions.len())
            && a.actions.iter().all(|x| x.0 < n_actions)
            && a.attributes.len() == n_attrs
    });
    if !agents_ok || n == 0 {
        return;
    }

    let profile = spec.profile();
    let mut index: HashMap<(usize, &[ActionId]), Vec<usize>> = HashMap::new();
    for (i, entry) in spec.transition.entries.iter().enumerate() {
        if well_formed[i] && entry.matches_profile(&profile) {
            index.entry((entry.state.0, entry.joint.as_slice())).or_default().push(i);
        }
    }

    for s in 0..n_states {
        let supports: Vec<Vec<ActionId>> = spec
            .agents
            .iter()
            .map(|a| a.support(StateId(s)).into_iter().map(|(act, _)| act).collect())
            .collect();
        if supports.iter().any(Vec::is_empty) {
            continue;
        }
        for_each_joint(&supports, |joint| match index.get(&(s, joint)).map(Vec::len) {
            None | Some(0) => out.push(
                ViolationCode::TransitionMissing,
                Location {
                    state: Some(s),
                    ..Location::default()
                },
                format!("no transition entry for state {s}, joint action {}", fmt_joint(joint)),
            ),
            Some(1) => {}
            Some(k) => out.push(
                ViolationCode::TransitionAmbiguous,
                Location {
                    state: Some(s),
                    ..Location::default()
                },
                format!("{k} transition entries match state {s}, joint action {}", fmt_joint(joint)),
            ),
        });
    }
}

pub(crate) fn fmt_joint(joint: &[ActionId]) -> String {
    let parts: Vec<String> = joint.iter().map(|a| a.0.to_string()).collect();
    format!("({})", parts.join(","))
}

/// Visits the Cartesian product of per-agent choices, agent 0 varying slowest.
pub(crate) fn for_each_joint<F: FnMut(&[ActionId])>(choices: &[Vec<ActionId>], mut f: F) {
    if choices.iter().any(Vec::is_empty) {
        return;
    }
    let mut idx = vec![0usize; choices.len()];
    let mut joint: Vec<ActionId> = choices.iter().map(|c| c[0]).collect();
    loop {
        f(&joint);
        let mut k = choices.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < choices[k].len() {
                joint[k] = choices[k][idx[k]];
                break;
            }
            idx[k] = 0;
            joint[k] = choices[k][0];
        }
    }
}

/// The n x |At| attribute matrix, row x being agent x's assignment.
pub fn attribute_profile(spec: &SystemSpec) -> Vec<Vec<u8>> {
    spec.agents.iter().map(|a| a.attributes.bits().to_vec()).collect()
}

/// True iff agent `x` holds `pr`, agent `y` does not, and both agree on every
/// other attribute. Only attributes are compared.
pub fn matches_except(spec: &SystemSpec, x: usize, y: usize, pr: usize) -> Result<bool, ModelError> {
    let n = spec.num_agents();
    for idx in [x, y] {
        if idx >= n {
            return Err(ModelError::IndexOutOfRange {
                what: "agent",
                index: idx,
                limit: n,
            });
        }
    }
    if pr >= spec.num_attributes() {
        return Err(ModelError::IndexOutOfRange {
            what: "attribute",
            index: pr,
            limit: spec.num_attributes(),
        });
    }
    let ax = &spec.agents[x].attributes;
    let ay = &spec.agents[y].attributes;
    if !(ax.holds(pr) && ay.get(pr) == Some(0)) {
        return Ok(false);
    }
    Ok(ax
        .bits()
        .iter()
        .zip(ay.bits())
        .enumerate()
        .all(|(i, (a, b))| i == pr || a == b))
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn codes(spec: &SystemSpec) -> Vec<ViolationCode> {
        validate_system(spec).into_iter().map(|v| v.code).collect()
    }

    #[test]
    fn well_formed_two_state_system_is_valid() {
        assert_eq!(validate_system(&two_state()), vec![]);
    }

    #[test]
    fn policy_summing_to_point_nine_is_flagged() {
        let mut spec = two_state();
        spec.agents[0].policy[0] = vec![0.0, 0.9];
        let v = validate_system(&spec);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].code, ViolationCode::PolicyNotNormalized);
        assert_eq!(v[0].location.agent, Some(0));
        assert_eq!(v[0].location.state, Some(0));
    }

    #[test]
    fn all_attributes_protected_is_not_strict() {
        let mut spec = two_state();
        spec.protected = BTreeSet::from([0, 1]);
        assert_eq!(codes(&spec), vec![ViolationCode::ProtectedNotStrictSubset]);
    }

    #[test]
    fn empty_protected_set_is_flagged() {
        let mut spec = two_state();
        spec.protected.clear();
        assert_eq!(codes(&spec), vec![ViolationCode::ProtectedEmpty]);
    }

    #[test]
    fn null_action_must_be_present() {
        let mut spec = two_state();
        spec.agents[0].actions = vec![ActionId(1)];
        spec.agents[0].policy = vec![vec![1.0], vec![1.0]];
        let c = codes(&spec);
        assert!(c.contains(&ViolationCode::NullActionMissing), "{c:?}");
    }

    #[test]
    fn missing_and_ambiguous_transitions() {
        let mut spec = two_state();
        let removed = spec.transition.entries.remove(1);
        assert_eq!(codes(&spec), vec![ViolationCode::TransitionMissing]);
        spec.transition.entries.push(removed.clone());
        spec.transition.entries.push(removed);
        assert_eq!(codes(&spec), vec![ViolationCode::TransitionAmbiguous]);
    }

    #[test]
    fn profile_conditions_require_sensitive_flag() {
        let mut spec = two_state();
        spec.transition.entries[0].condition = vec![ProfileLiteral {
            agent: 0,
            attribute: 0,
            value: 1,
        }];
        assert_eq!(codes(&spec), vec![ViolationCode::ProfileConditionNotAllowed]);
        spec.transition.attribute_sensitive = true;
        assert_eq!(codes(&spec), vec![]);
        // The condition no longer matches once the profile changes.
        spec.agents[0].attributes = AttributeAssignment::new(vec![0, 0]);
        assert_eq!(codes(&spec), vec![ViolationCode::TransitionMissing]);
    }

    #[test]
    fn transition_row_not_normalized() {
        let mut spec = two_state();
        spec.transition.entries[0].next = vec![(StateId(0), 0.5), (StateId(1), 0.48)];
        assert_eq!(codes(&spec), vec![ViolationCode::TransitionNotNormalized]);
    }

    #[test]
    fn non_binary_attribute_and_bad_start() {
        let mut spec = two_state();
        spec.agents[0].attributes = AttributeAssignment::new(vec![2, 0]);
        spec.start = StateId(5);
        let c = codes(&spec);
        assert!(c.contains(&ViolationCode::AttributeNotBinary));
        assert!(c.contains(&ViolationCode::StartOutOfRange));
    }

    #[test]
    fn validation_is_idempotent() {
        let mut spec = two_state();
        spec.agents[0].policy[1] = vec![0.3, 0.3];
        spec.protected = BTreeSet::from([0, 1]);
        assert_eq!(validate_system(&spec), validate_system(&spec));
    }

    #[test]
    fn attribute_profile_reads_rows() {
        let spec = with_attributes(&[&[1, 0], &[0, 0]]);
        assert_eq!(attribute_profile(&spec), vec![vec![1, 0], vec![0, 0]]);
        let mut one = two_state();
        one.attribute_names = vec!["p".into()];
        one.agents[0].attributes = AttributeAssignment::new(vec![1]);
        assert_eq!(attribute_profile(&one), vec![vec![1]]);
        let zeros = with_attributes(&[&[0, 0], &[0, 0], &[0, 0]]);
        assert_eq!(attribute_profile(&zeros), vec![vec![0; 2]; 3]);
    }

    #[test]
    fn matches_except_examples() {
        let spec = with_attributes(&[&[1, 0], &[0, 0], &[1, 1]]);
        assert!(matches_except(&spec, 0, 1, 0).unwrap());
        assert!(!matches_except(&spec, 2, 1, 0).unwrap());
        assert!(!matches_except(&spec, 1, 0, 0).unwrap());
        assert_eq!(
            matches_except(&spec, 0, 9, 0).unwrap_err().code(),
            "INDEX_OUT_OF_RANGE"
        );
        assert!(matches_except(&spec, 0, 1, 7).is_err());
    }

    #[test]
    fn reward_table_drops_zeros() {
        let mut t = RewardTable::new();
        t.set(StateId(0), StateId(1), 2.0);
        t.set(StateId(1), StateId(1), 0.0);
        assert_eq!(t.len(), 1);
        t.set(StateId(0), StateId(1), 0.0);
        assert!(t.is_empty());
        assert_eq!(t.get(StateId(0), StateId(1)), 0.0);
    }

    #[test]
    fn joint_product_order_is_lexicographic() {
        let choices = vec![vec![ActionId(0), ActionId(2)], vec![ActionId(1), ActionId(3)]];
        let mut seen = Vec::new();
        for_each_joint(&choices, |j| seen.push(j.to_vec()));
        let expect: Vec<Vec<ActionId>> = [[0, 1], [0, 3], [2, 1], [2, 3]]
            .iter()
            .map(|r| r.iter().map(|&a| ActionId(a)).collect())
            .collect();
        assert_eq!(seen, expect);
    }
}
