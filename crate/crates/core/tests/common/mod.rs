//! Reference implementations that share no code with the engine.

#![allow(dead_code)]

use fairmas_core::fixtures::{random_system, RandomLimits};
use fairmas_core::stream::sequential_stream;
use fairmas_core::{ActionId, StateId, SystemSpec};
use serde::Deserialize;

/// Expected reward of `agent` over `horizon` steps from `state`, by direct
/// recursion over the joint action space.
pub fn brute_force(spec: &SystemSpec, agent: usize, state: usize, horizon: usize) -> f64 {
    if horizon == 0 {
        return 0.0;
    }
    let profile = spec.profile();
    let n = spec.agents.len();
    let mut total = 0.0;
    let mut joint = vec![0usize; n];
    loop {
        let mut p_joint = 1.0;
        for (i, a) in spec.agents.iter().enumerate() {
            p_joint *= a.policy[state][joint[i]];
        }
        if p_joint > 0.0 {
            let actions: Vec<ActionId> = (0..n).map(|i| spec.agents[i].actions[joint[i]]).collect();
            let entry = spec
                .transition
                .entries
                .iter()
                .find(|e| e.state == StateId(state) && e.joint == actions && e.matches_profile(&profile))
                .expect("valid systems cover every reachable joint action");
            for &(next, p) in &entry.next {
                let r = spec.agents[agent].rewards.get(StateId(state), next);
                total += p_joint * p * (r + brute_force(spec, agent, next.0, horizon - 1));
            }
        }
        let mut i = n;
        loop {
            if i == 0 {
                return total;
            }
            i -= 1;
            joint[i] += 1;
            if joint[i] < spec.agents[i].actions.len() {
                break;
            }
            joint[i] = 0;
        }
    }
}

/// One car alone in the corridor: it advances with probability `advance`
/// per step; `arrival` is paid on reaching the end, `step` otherwise.
pub struct CarChain {
    pub length: usize,
    pub advance: f64,
    pub arrival: f64,
    pub step: f64,
}

impl CarChain {
    pub fn expected(&self, horizon: usize) -> f64 {
        self.value(0, horizon)
    }

    fn value(&self, pos: usize, h: usize) -> f64 {
        if h == 0 || pos == self.length {
            return 0.0;
        }
        let a = self.advance;
        let moved = if pos + 1 == self.length {
            self.arrival
        } else {
            self.step + self.value(pos + 1, h - 1)
        };
        a * moved + (1.0 - a) * (self.step + self.value(pos, h - 1))
    }
}

#[derive(Debug, Deserialize)]
pub struct TrafficGolden {
    pub horizon: usize,
    pub baseline: GoldenCase,
    pub dedicated_lane: GoldenCase,
}

#[derive(Debug, Deserialize)]
pub struct GoldenCase {
    pub dem_par: f64,
    pub count_fair: f64,
    #[serde(default)]
    pub expected_rewards: Vec<f64>,
}

pub fn traffic_golden() -> TrafficGolden {
    serde_json::from_str(include_str!("../golden/traffic.json")).expect("golden file parses")
}

/// `count` random systems from a fixed seed.
pub fn random_systems(seed: u64, count: usize, limits: RandomLimits) -> Vec<SystemSpec> {
    let mut rng = sequential_stream(seed);
    (0..count).map(|_| random_system(&mut rng, limits)).collect()
}

pub fn relative_error(actual: f64, expected: f64) -> f64 {
    (actual - expected).abs() / expected.abs().max(1.0)
}
