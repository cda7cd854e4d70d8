//! Small hand-built systems and a random system generator, shared by the
//! unit tests, the integration tests, and the acceptance suite.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;

use crate::optimizer::{Binder, ConfigSpace, ParamKind, ParamSpec, ParamValue};
use crate::model::{
    ActionId, AgentSpec, AttributeAssignment, ProfileLiteral, RewardTable, StateId, SystemSpec, TransitionEntry,
    TransitionSpec,
};

fn base(num_states: usize, actions: &[&str], agents: Vec<AgentSpec>, entries: Vec<TransitionEntry>) -> SystemSpec {
    SystemSpec {
        num_states,
        state_names: None,
        start: StateId(0),
        action_names: actions.iter().map(|s| s.to_string()).collect(),
        attribute_names: vec!["protected".into(), "other".into()],
        protected: BTreeSet::from([0]),
        agents,
        transition: TransitionSpec {
            attribute_sensitive: false,
            entries,
        },
    }
}

fn agent(bits: &[u8], actions: &[usize], policy: Vec<Vec<f64>>, rewards: &[(usize, usize, f64)]) -> AgentSpec {
    AgentSpec {
        name: None,
        attributes: AttributeAssignment::new(bits.to_vec()),
        actions: actions.iter().map(|&a| ActionId(a)).collect(),
        policy,
        rewards: rewards.iter().map(|&(a, b, v)| (StateId(a), StateId(b), v)).collect(),
    }
}

fn entry(state: usize, joint: &[usize], next: &[(usize, f64)]) -> TransitionEntry {
    TransitionEntry {
        state: StateId(state),
        joint: joint.iter().map(|&a| ActionId(a)).collect(),
        condition: vec![],
        next: next.iter().map(|&(s, p)| (StateId(s), p)).collect(),
    }
}

/// One state with a self loop paying `reward` per step.
pub fn deterministic_chain(reward: f64) -> SystemSpec {
    base(
        1,
        &["null"],
        vec![agent(&[1, 0], &[0], vec![vec![1.0]], &[(0, 0, reward)])],
        vec![entry(0, &[0], &[(0, 1.0)])],
    )
}

/// From state 0 the system moves to the absorbing state 1 with probability
/// `p` (reward 1) or stays (reward 0).
pub fn coin(p: f64) -> SystemSpec {
    base(
        2,
        &["null"],
        vec![agent(&[1, 0], &[0], vec![vec![1.0], vec![1.0]], &[(0, 1, 1.0)])],
        vec![entry(0, &[0], &[(0, 1.0 - p), (1, p)]), entry(1, &[0], &[(1, 1.0)])],
    )
}

/// One agent choosing between two actions with equal probability; `go`
/// toggles the state deterministically.
pub fn coin_actions() -> SystemSpec {
    let half = vec![vec![0.5, 0.5]; 2];
    base(
        2,
        &["null", "go"],
        vec![agent(&[1, 0], &[0, 1], half, &[])],
        vec![
            entry(0, &[0], &[(0, 1.0)]),
            entry(0, &[1], &[(1, 1.0)]),
            entry(1, &[0], &[(1, 1.0)]),
            entry(1, &[1], &[(0, 1.0)]),
        ],
    )
}

/// Two agents, each picking null/go with probability 0.5; from state 0 any
/// joint action reaches state 1 with probability `q`.
pub fn two_agent_half_policies(q: f64) -> SystemSpec {
    let half = vec![vec![0.5, 0.5]; 2];
    let mut entries = Vec::new();
    for a in 0..2 {
        for b in 0..2 {
            entries.push(entry(0, &[a, b], &[(0, 1.0 - q), (1, q)]));
            entries.push(entry(1, &[a, b], &[(1, 1.0)]));
        }
    }
    base(
        2,
        &["null", "go"],
        vec![
            agent(&[1, 0], &[0, 1], half.clone(), &[(0, 1, 1.0)]),
            agent(&[0, 0], &[0, 1], half, &[(0, 1, 1.0)]),
        ],
        entries,
    )
}

/// One agent, uniform over two actions; every transition is uniform over
/// both states.
pub fn uniform_two_by_two() -> SystemSpec {
    let mut entries = Vec::new();
    for s in 0..2 {
        for a in 0..2 {
            entries.push(entry(s, &[a], &[(0, 0.5), (1, 0.5)]));
        }
    }
    base(2, &["null", "go"], vec![agent(&[1, 0], &[0, 1], vec![vec![0.5, 0.5]; 2], &[])], entries)
}

/// [`uniform_two_by_two`] with reward 1 on every state pair.
pub fn all_pairs_reward_one() -> SystemSpec {
    let mut spec = uniform_two_by_two();
    spec.agents[0].rewards = [(0, 0), (0, 1), (1, 0), (1, 1)]
        .iter()
        .map(|&(a, b)| (StateId(a), StateId(b), 1.0))
        .collect();
    spec
}

/// Deterministic 0 -> 1 -> 0 cycle with rewards (0,1) = 2 and (1,0) = -1.
pub fn signed_rewards() -> SystemSpec {
    base(
        2,
        &["null"],
        vec![agent(&[1, 0], &[0], vec![vec![1.0], vec![1.0]], &[(0, 1, 2.0), (1, 0, -1.0)])],
        vec![entry(0, &[0], &[(1, 1.0)]), entry(1, &[0], &[(0, 1.0)])],
    )
}

/// Two agents identical in actions, policy, and rewards, differing only in
/// the protected attribute; stochastic, attribute-insensitive dynamics.
pub fn symmetric_twins() -> SystemSpec {
    let policy = vec![vec![0.4, 0.6], vec![0.7, 0.3], vec![1.0, 0.0]];
    let rewards = [(0, 1, 1.0), (1, 2, 5.0), (0, 0, -0.5), (1, 1, -0.25)];
    let mut entries = Vec::new();
    for a in 0..2 {
        for b in 0..2 {
            let go = a + b;
            let p = 0.2 + 0.3 * go as f64;
            entries.push(entry(0, &[a, b], &[(0, 1.0 - p), (1, p)]));
            entries.push(entry(1, &[a, b], &[(1, 1.0 - p), (2, p)]));
            entries.push(entry(2, &[a, b], &[(2, 1.0)]));
        }
    }
    base(
        3,
        &["null", "go"],
        vec![
            agent(&[1, 0], &[0, 1], policy.clone(), &rewards),
            agent(&[0, 0], &[0, 1], policy, &rewards),
        ],
        entries,
    )
}

/// Two agents differing only in the protected bit. From state 0 the system
/// reaches the absorbing state 1 with probability `p`; the protected agent
/// earns 1 on that step, the other earns 0.5 on every step out of state 0.
/// At horizon 1 the demographic parity measure is `p - 0.5`.
pub fn parity_gap(p: f64) -> SystemSpec {
    base(
        2,
        &["null"],
        vec![
            agent(&[1, 0], &[0], vec![vec![1.0], vec![1.0]], &[(0, 1, 1.0)]),
            agent(&[0, 0], &[0], vec![vec![1.0], vec![1.0]], &[(0, 0, 0.5), (0, 1, 0.5)]),
        ],
        vec![entry(0, &[0, 0], &[(0, 1.0 - p), (1, p)]), entry(1, &[0, 0], &[(1, 1.0)])],
    )
}

struct ParityGapBinder;

impl Binder for ParityGapBinder {
    fn bind(&self, config: &[ParamValue]) -> Result<SystemSpec, String> {
        let p = config.first().and_then(ParamValue::as_real).ok_or("p expects a real value")?;
        Ok(parity_gap(p))
    }
}

/// One real parameter `p` in [0, 1] bound to [`parity_gap`].
pub fn parity_gap_space() -> ConfigSpace {
    ConfigSpace::new(
        vec![ParamSpec {
            name: "p".into(),
            kind: ParamKind::Real { lo: 0.0, hi: 1.0 },
        }],
        Arc::new(ParityGapBinder),
    )
    .expect("valid space")
}

/// Size limits for [`random_system`].
#[derive(Debug, Clone, Copy)]
pub struct RandomLimits {
    pub max_states: usize,
    pub max_actions: usize,
    pub max_agents: usize,
    /// Emit profile-conditioned transition entries.
    pub attribute_sensitive: bool,
}

impl Default for RandomLimits {
    fn default() -> Self {
        Self {
            max_states: 4,
            max_actions: 3,
            max_agents: 3,
            attribute_sensitive: false,
        }
    }
}

fn random_distribution<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..len)
            .map(|_| if rng.random_bool(0.25) { 0.0 } else { rng.random_range(0.05..1.0) })
            .collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            return raw.into_iter().map(|w| w / total).collect();
        }
    }
}

fn random_next<R: Rng + ?Sized>(rng: &mut R, num_states: usize) -> Vec<(StateId, f64)> {
    random_distribution(rng, num_states)
        .into_iter()
        .enumerate()
        .filter(|&(_, p)| p > 0.0)
        .map(|(s, p)| (StateId(s), p))
        .collect()
}

/// A random valid system within `limits`. Attribute 0 is protected; there
/// are two or three attributes.
pub fn random_system<R: Rng + ?Sized>(rng: &mut R, limits: RandomLimits) -> SystemSpec {
    let num_states = rng.random_range(1..=limits.max_states);
    let num_actions = rng.random_range(1..=limits.max_actions);
    let num_agents = rng.random_range(1..=limits.max_agents);
    let num_attrs = rng.random_range(2..=3);

    let agents: Vec<AgentSpec> = (0..num_agents)
        .map(|_| {
            let mut actions = vec![ActionId(0)];
            for a in 1..num_actions {
                if rng.random_bool(0.7) {
                    actions.push(ActionId(a));
                }
            }
            let policy = (0..num_states).map(|_| random_distribution(rng, actions.len())).collect();
            let mut rewards = RewardTable::new();
            for from in 0..num_states {
                for to in 0..num_states {
                    if rng.random_bool(0.6) {
                        let v = (rng.random_range(-40..=40) as f64) / 8.0;
                        rewards.set(StateId(from), StateId(to), v);
                    }
                }
            }
            AgentSpec {
                name: None,
                attributes: AttributeAssignment::new((0..num_attrs).map(|_| u8::from(rng.random_bool(0.5))).collect()),
                actions,
                policy,
                rewards,
            }
        })
        .collect();

    let choices: Vec<Vec<ActionId>> = agents.iter().map(|a| a.actions.clone()).collect();
    let mut joints = Vec::new();
    crate::model::for_each_joint(&choices, |j| joints.push(j.to_vec()));

    let mut entries = Vec::new();
    for s in 0..num_states {
        for joint in &joints {
            if limits.attribute_sensitive && rng.random_bool(0.5) {
                let lit_agent = rng.random_range(0..num_agents);
                for value in 0..2u8 {
                    entries.push(TransitionEntry {
                        state: StateId(s),
                        joint: joint.clone(),
                        condition: vec![ProfileLiteral {
                            agent: lit_agent,
                            attribute: 0,
                            value,
                        }],
                        next: random_next(rng, num_states),
                    });
                }
            } else {
                entries.push(TransitionEntry {
                    state: StateId(s),
                    joint: joint.clone(),
                    condition: vec![],
                    next: random_next(rng, num_states),
                });
            }
        }
    }
    let attribute_sensitive = entries.iter().any(|e| !e.condition.is_empty());

    SystemSpec {
        num_states,
        state_names: None,
        start: StateId(rng.random_range(0..num_states)),
        action_names: (0..num_actions)
            .map(|a| if a == 0 { "null".to_string() } else { format!("act{a}") })
            .collect(),
        attribute_names: (0..num_attrs).map(|i| format!("attr{i}")).collect(),
        protected: BTreeSet::from([0]),
        agents,
        transition: TransitionSpec {
            attribute_sensitive,
            entries,
        },
    }
}
