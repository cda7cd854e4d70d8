//! Run enumeration, run probabilities and rewards, and exact or Monte Carlo
//! expected rewards over a fixed horizon.
//!
//! Expectations are taken over runs of exactly `H` steps. A [`Dynamics`] is
//! the system compiled against its own attribute profile: for each state it
//! lists the positive-probability joint actions together with the resolved
//! next-state distribution. Enumeration is depth first with joint actions in
//! lexicographic order (agent 0 slowest) and next states ascending.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_system, ActionId, Run, StateId, SystemSpec, Violation};
use crate::stream::{sample_stream, SampleRng};

/// Default upper bound on the number of runs an exact computation may visit.
pub const DEFAULT_ENUM_CAP: u64 = 10_000_000;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("VALIDATION_FAILED: {} violation(s), first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    InvalidSpec(Vec<Violation>),
    #[error("SHAPE_MISMATCH: {0}")]
    ShapeMismatch(String),
    #[error("ENUMERATION_CAP_EXCEEDED: {estimated} runs exceed the cap of {cap}")]
    EnumerationCapExceeded { estimated: u128, cap: u64 },
    #[error("INDEX_OUT_OF_RANGE: agent {index} (population {limit})")]
    AgentOutOfRange { index: usize, limit: usize },
    #[error("INVALID_ARGUMENT: {0}")]
    InvalidArgument(String),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::InvalidSpec(_) => "VALIDATION_FAILED",
            EngineError::ShapeMismatch(_) => "SHAPE_MISMATCH",
            EngineError::EnumerationCapExceeded { .. } => "ENUMERATION_CAP_EXCEEDED",
            EngineError::AgentOutOfRange { .. } => "INDEX_OUT_OF_RANGE",
            EngineError::InvalidArgument(_) => "INVALID_ARGUMENT",
        }
    }
}

/// A positive-probability joint action in one state.
#[derive(Debug, Clone)]
struct Branch {
    joint: Vec<ActionId>,
    /// Product of the agents' policy probabilities, folded in agent order.
    policy_prob: f64,
    /// Positive next-state probabilities, ascending by state.
    next: Vec<(StateId, f64)>,
}

/// A validated system compiled for its own attribute profile.
#[derive(Debug, Clone)]
pub struct Dynamics<'a> {
    spec: &'a SystemSpec,
    /// `supports[s][x]`: agent x's positive-probability actions in s, ascending.
    supports: Vec<Vec<Vec<(ActionId, f64)>>>,
    /// `branches[s]`, sorted by joint action.
    branches: Vec<Vec<Branch>>,
}

fn joint_policy_prob(spec: &SystemSpec, state: StateId, joint: &[ActionId]) -> f64 {
    spec.agents
        .iter()
        .zip(joint)
        .fold(1.0, |acc, (agent, &a)| acc * agent.action_probability(state, a))
}

#[inline]
fn step_probability(acc: f64, policy_prob: f64, tau_prob: f64) -> f64 {
    acc * (policy_prob * tau_prob)
}

impl<'a> Dynamics<'a> {
    /// Validates `spec` and resolves its transformer against the population profile.
    pub fn new(spec: &'a SystemSpec) -> Result<Self, EngineError> {
        let violations = validate_system(spec);
        if !violations.is_empty() {
            return Err(EngineError::InvalidSpec(violations));
        }
        let profile = spec.profile();
        let mut resolved: std::collections::HashMap<(usize, &[ActionId]), &crate::model::TransitionEntry> =
            std::collections::HashMap::new();
        for entry in &spec.transition.entries {
            if entry.matches_profile(&profile) {
                resolved.insert((entry.state.0, entry.joint.as_slice()), entry);
            }
        }

        let mut supports = Vec::with_capacity(spec.num_states);
        let mut branches = Vec::with_capacity(spec.num_states);
        for s in 0..spec.num_states {
            let state = StateId(s);
            let per_agent: Vec<Vec<(ActionId, f64)>> =
                spec.agents.iter().map(|a| a.support(state)).collect();
            let choices: Vec<Vec<ActionId>> = per_agent
                .iter()
                .map(|sup| sup.iter().map(|&(a, _)| a).collect())
                .collect();
            let mut row = Vec::new();
            crate::model::for_each_joint(&choices, |joint| {
                // Validation guarantees exactly one matching entry.
                let entry = resolved[&(s, joint)];
                let mut next: Vec<(StateId, f64)> =
                    entry.next.iter().copied().filter(|&(_, p)| p > 0.0).collect();
                next.sort_by_key(|&(t, _)| t);
                row.push(Branch {
                    joint: joint.to_vec(),
                    policy_prob: joint_policy_prob(spec, state, joint),
                    next,
                });
            });
            supports.push(per_agent);
            branches.push(row);
        }
        Ok(Self {
            spec,
            supports,
            branches,
        })
    }

    pub fn spec(&self) -> &'a SystemSpec {
        self.spec
    }

    fn branch(&self, state: StateId, joint: &[ActionId]) -> Option<&Branch> {
        let row = self.branches.get(state.0)?;
        row.binary_search_by(|b| b.joint.as_slice().cmp(joint))
            .ok()
            .map(|i| &row[i])
    }

    /// Largest number of (joint action, next state) branches out of any state.
    pub fn max_branching(&self) -> usize {
        self.branches
            .iter()
            .map(|row| row.iter().map(|b| b.next.len()).sum::<usize>())
            .max()
            .unwrap_or(0)
    }

    /// Exact number of positive-probability runs of `horizon` steps (saturating).
    pub fn count_runs(&self, horizon: usize) -> u128 {
        let n = self.spec.num_states;
        let mut counts = vec![1u128; n];
        for _ in 0..horizon {
            let next: Vec<u128> = (0..n)
                .map(|s| {
                    self.branches[s]
                        .iter()
                        .flat_map(|b| b.next.iter())
                        .fold(0u128, |acc, &(t, _)| acc.saturating_add(counts[t.0]))
                })
                .collect();
            counts = next;
        }
        counts[self.spec.start.0]
    }

    fn check_cap(&self, horizon: usize, cap: u64) -> Result<(), EngineError> {
        let estimated = self.count_runs(horizon);
        if estimated > u128::from(cap) {
            return Err(EngineError::EnumerationCapExceeded { estimated, cap });
        }
        Ok(())
    }

    fn check_agent(&self, agent: usize) -> Result<(), EngineError> {
        let limit = self.spec.num_agents();
        if agent >= limit {
            return Err(EngineError::AgentOutOfRange { index: agent, limit });
        }
        Ok(())
    }

    /// Calls `visit` once per positive-probability run of exactly `horizon`
    /// steps, in depth-first order.
    pub fn for_each_run<F>(&self, horizon: usize, cap: u64, mut visit: F) -> Result<(), EngineError>
    where
        F: FnMut(&RunView<'_>),
    {
        check_horizon(horizon)?;
        self.check_cap(horizon, cap)?;
        let n = self.spec.num_agents();
        let mut walk = Walk {
            states: Vec::with_capacity(horizon + 1),
            joints: Vec::with_capacity(horizon),
            rewards: vec![vec![0.0; n]; horizon + 1],
        };
        walk.states.push(self.spec.start);
        self.descend(horizon, 1.0, &mut walk, &mut visit);
        Ok(())
    }

    fn descend<'b, F>(&'b self, remaining: usize, prob: f64, walk: &mut Walk<'b>, visit: &mut F)
    where
        F: FnMut(&RunView<'_>),
    {
        let depth = walk.joints.len();
        if remaining == 0 {
            visit(&RunView {
                states: &walk.states,
                joints: &walk.joints,
                probability: prob,
                rewards: &walk.rewards[depth],
            });
            return;
        }
        let here = *walk.states.last().expect("run has a start state");
        for branch in &self.branches[here.0] {
            for &(next, tau) in &branch.next {
                let p = step_probability(prob, branch.policy_prob, tau);
                for (x, agent) in self.spec.agents.iter().enumerate() {
                    walk.rewards[depth + 1][x] = walk.rewards[depth][x] + agent.rewards.get(here, next);
                }
                walk.states.push(next);
                walk.joints.push(&branch.joint);
                self.descend(remaining - 1, p, walk, visit);
                walk.states.pop();
                walk.joints.pop();
            }
        }
    }

    /// Every run of exactly `horizon` steps with positive probability.
    pub fn enumerate_runs(&self, horizon: usize, cap: u64) -> Result<Vec<Run>, EngineError> {
        let mut runs = Vec::new();
        self.for_each_run(horizon, cap, |view| runs.push(view.to_run()))?;
        Ok(runs)
    }

    /// Exact expected reward of every agent over `horizon`-step runs.
    pub fn expected_rewards_exact(&self, horizon: usize, cap: u64) -> Result<Vec<f64>, EngineError> {
        let n = self.spec.num_agents();
        let mut sums = vec![NeumaierSum::default(); n];
        self.for_each_run(horizon, cap, |view| {
            for (acc, &r) in sums.iter_mut().zip(view.rewards) {
                acc.add(r * view.probability);
            }
        })?;
        Ok(sums.iter().map(NeumaierSum::value).collect())
    }

    /// Run count, total probability mass, and every agent's exact expected
    /// reward from a single enumeration pass.
    pub fn summarize_runs(&self, horizon: usize, cap: u64) -> Result<RunSummary, EngineError> {
        let n = self.spec.num_agents();
        let mut sums = vec![NeumaierSum::default(); n];
        let mut mass = NeumaierSum::default();
        let mut runs = 0u64;
        self.for_each_run(horizon, cap, |view| {
            runs += 1;
            mass.add(view.probability);
            for (acc, &r) in sums.iter_mut().zip(view.rewards) {
                acc.add(r * view.probability);
            }
        })?;
        Ok(RunSummary {
            horizon,
            runs,
            probability_mass: mass.value(),
            expected_rewards: sums.iter().map(NeumaierSum::value).collect(),
        })
    }

    pub fn expected_reward_exact(&self, agent: usize, horizon: usize, cap: u64) -> Result<f64, EngineError> {
        self.check_agent(agent)?;
        Ok(self.expected_rewards_exact(horizon, cap)?[agent])
    }

    /// Probability of `run` under the system, recomputed step by step.
    pub fn run_probability(&self, run: &Run) -> Result<f64, EngineError> {
        self.check_shape(run)?;
        let mut acc = 1.0;
        for (i, joint) in run.joint_actions.iter().enumerate() {
            let here = run.states[i];
            let Some(branch) = self.branch(here, joint) else {
                return Ok(0.0);
            };
            let next = run.states[i + 1];
            let tau = branch
                .next
                .iter()
                .find(|&&(t, _)| t == next)
                .map_or(0.0, |&(_, p)| p);
            if tau == 0.0 {
                return Ok(0.0);
            }
            acc = step_probability(acc, branch.policy_prob, tau);
        }
        Ok(acc)
    }

    /// Sum of the agent's transition rewards along `run`.
    pub fn run_reward(&self, agent: usize, run: &Run) -> Result<f64, EngineError> {
        self.check_agent(agent)?;
        self.check_shape(run)?;
        let rewards = &self.spec.agents[agent].rewards;
        Ok(run
            .states
            .windows(2)
            .fold(0.0, |acc, w| acc + rewards.get(w[0], w[1])))
    }

    fn check_shape(&self, run: &Run) -> Result<(), EngineError> {
        let spec = self.spec;
        if run.states.len() != run.joint_actions.len() + 1 {
            return Err(EngineError::ShapeMismatch(format!(
                "{} states for {} joint actions",
                run.states.len(),
                run.joint_actions.len()
            )));
        }
        if run.states[0] != spec.start {
            return Err(EngineError::ShapeMismatch(format!(
                "run starts at {} but the system starts at {}",
                run.states[0].0, spec.start.0
            )));
        }
        if let Some(s) = run.states.iter().find(|s| s.0 >= spec.num_states) {
            return Err(EngineError::ShapeMismatch(format!("state {} out of range", s.0)));
        }
        for joint in &run.joint_actions {
            if joint.len() != spec.num_agents() {
                return Err(EngineError::ShapeMismatch(format!(
                    "joint action of width {} for {} agents",
                    joint.len(),
                    spec.num_agents()
                )));
            }
            if let Some(a) = joint.iter().find(|a| a.0 >= spec.num_actions()) {
                return Err(EngineError::ShapeMismatch(format!("action {} out of range", a.0)));
            }
        }
        Ok(())
    }

    /// Forward-samples one run: each agent draws from its policy, then the
    /// next state is drawn from the transformer, `horizon` times.
    pub fn sample_run<R: Rng + ?Sized>(&self, horizon: usize, rng: &mut R) -> Result<Run, EngineError> {
        check_horizon(horizon)?;
        let mut states = vec![self.spec.start];
        let mut joint_actions = Vec::with_capacity(horizon);
        self.walk(horizon, rng, |_, joint, _, next| {
            joint_actions.push(joint.to_vec());
            states.push(next);
        });
        let mut run = Run {
            states,
            joint_actions,
            probability: 0.0,
        };
        run.probability = self.run_probability(&run)?;
        Ok(run)
    }

    fn walk<R, F>(&self, horizon: usize, rng: &mut R, mut step: F)
    where
        R: Rng + ?Sized,
        F: FnMut(StateId, &[ActionId], &Branch, StateId),
    {
        let mut joint = vec![ActionId(0); self.spec.num_agents()];
        let mut here = self.spec.start;
        for _ in 0..horizon {
            for (x, slot) in joint.iter_mut().enumerate() {
                *slot = draw(&self.supports[here.0][x], rng);
            }
            let branch = self
                .branch(here, &joint)
                .expect("sampled joint action has a resolved transition");
            let next = draw(&branch.next, rng);
            step(here, &joint, branch, next);
            here = next;
        }
    }

    /// Per-sample rewards: row `i` (length n) holds every agent's reward on
    /// the run sampled from stream `(seed, i)`. Worker-count independent.
    pub fn sample_rewards(&self, horizon: usize, samples: usize, seed: u64) -> Result<RewardSamples, EngineError> {
        check_horizon(horizon)?;
        if samples == 0 {
            return Err(EngineError::InvalidArgument("sample count must be positive".into()));
        }
        let n = self.spec.num_agents();
        let mut data = vec![0.0; samples * n];
        data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let mut rng: SampleRng = sample_stream(seed, i as u64);
            self.walk(horizon, &mut rng, |here, _, _, next| {
                for (slot, agent) in row.iter_mut().zip(&self.spec.agents) {
                    *slot += agent.rewards.get(here, next);
                }
            });
        });
        Ok(RewardSamples {
            agents: n,
            samples,
            seed,
            horizon,
            data,
        })
    }

    /// Monte Carlo estimate of one agent's expected reward.
    pub fn expected_reward_mc(
        &self,
        agent: usize,
        horizon: usize,
        samples: usize,
        seed: u64,
    ) -> Result<EstimatorResult, EngineError> {
        self.check_agent(agent)?;
        if samples < 2 {
            return Err(EngineError::InvalidArgument("Monte Carlo needs at least 2 samples".into()));
        }
        let draws = self.sample_rewards(horizon, samples, seed)?;
        Ok(draws.estimate(agent))
    }
}

fn check_horizon(horizon: usize) -> Result<(), EngineError> {
    if horizon == 0 {
        return Err(EngineError::InvalidArgument("horizon must be at least 1".into()));
    }
    Ok(())
}

/// Inverse-CDF draw over a positive distribution listed in ascending order.
fn draw<T: Copy, R: Rng + ?Sized>(dist: &[(T, f64)], rng: &mut R) -> T {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(item, p) in dist {
        acc += p;
        if u < acc {
            return item;
        }
    }
    // Rounding left u above the accumulated mass.
    dist.last().expect("distribution has support").0
}

struct Walk<'b> {
    states: Vec<StateId>,
    joints: Vec<&'b [ActionId]>,
    /// `rewards[d][x]`: agent x's accumulated reward after d steps.
    rewards: Vec<Vec<f64>>,
}

/// Result of [`Dynamics::summarize_runs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub horizon: usize,
    pub runs: u64,
    pub probability_mass: f64,
    pub expected_rewards: Vec<f64>,
}

/// A run visited during enumeration, with every agent's accumulated reward.
pub struct RunView<'v> {
    pub states: &'v [StateId],
    pub joints: &'v [&'v [ActionId]],
    pub probability: f64,
    pub rewards: &'v [f64],
}

impl RunView<'_> {
    pub fn to_run(&self) -> Run {
        Run {
            states: self.states.to_vec(),
            joint_actions: self.joints.iter().map(|j| j.to_vec()).collect(),
            probability: self.probability,
        }
    }
}

/// Compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Row-major matrix of sampled per-agent run rewards.
#[derive(Debug, Clone)]
pub struct RewardSamples {
    pub agents: usize,
    pub samples: usize,
    pub seed: u64,
    pub horizon: usize,
    data: Vec<f64>,
}

impl RewardSamples {
    pub fn row(&self, sample: usize) -> &[f64] {
        &self.data[sample * self.agents..(sample + 1) * self.agents]
    }

    pub fn column(&self, agent: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples).map(move |i| self.data[i * self.agents + agent])
    }

    pub fn estimate(&self, agent: usize) -> EstimatorResult {
        let values: Vec<f64> = self.column(agent).collect();
        EstimatorResult::from_values(&values, self.seed, self.horizon)
    }
}

/// Monte Carlo estimate with a 95% normal-approximation interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub mean: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub samples: usize,
    pub seed: u64,
    pub horizon: usize,
}

impl EstimatorResult {
    /// Summarises per-sample values. Summation is sequential in sample order.
    pub fn from_values(values: &[f64], seed: u64, horizon: usize) -> Self {
        let (mean, std_error) = mean_and_std_error(values);
        let half = Z_95 * std_error;
        Self {
            mean,
            std_error,
            ci_low: mean - half,
            ci_high: mean + half,
            samples: values.len(),
            seed,
            horizon,
        }
    }
}

/// Sample mean and standard error (sample standard deviation / sqrt(n)).
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let var = ss / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Convenience wrappers over a freshly compiled [`Dynamics`].
pub fn run_probability(spec: &SystemSpec, run: &Run) -> Result<f64, EngineError> {
    Dynamics::new(spec)?.run_probability(run)
}

pub fn run_reward(spec: &SystemSpec, agent: usize, run: &Run) -> Result<f64, EngineError> {
    Dynamics::new(spec)?.run_reward(agent, run)
}

pub fn enumerate_runs(spec: &SystemSpec, horizon: usize) -> Result<Vec<Run>, EngineError> {
    Dynamics::new(spec)?.enumerate_runs(horizon, DEFAULT_ENUM_CAP)
}

pub fn expected_reward_exact(spec: &SystemSpec, agent: usize, horizon: usize) -> Result<f64, EngineError> {
    Dynamics::new(spec)?.expected_reward_exact(agent, horizon, DEFAULT_ENUM_CAP)
}

pub fn expected_reward_mc(
    spec: &SystemSpec,
    agent: usize,
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<EstimatorResult, EngineError> {
    Dynamics::new(spec)?.expected_reward_mc(agent, horizon, samples, seed)
}

pub fn sample_run<R: Rng + ?Sized>(spec: &SystemSpec, horizon: usize, rng: &mut R) -> Result<Run, EngineError> {
    Dynamics::new(spec)?.sample_run(horizon, rng)
}
