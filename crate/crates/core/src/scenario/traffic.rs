//! Human-driven vs AI-driven cars sharing a corridor with a fast and a slow
//! route.
//!
//! Each car advances along positions `0..=L`. Every step a car that has not
//! arrived picks `advance_fast` or `advance_slow`; the attempt succeeds with a
//! route- and driver-dependent gain, scaled down for low-speed cars, and the
//! car stays put otherwise. Cars move independently. With a dedicated lane
//! the fast route only admits human-driven cars, so an AI-driven car on it
//! advances at the slow-route gain. Driver-dependent gains are expressed as
//! profile-conditioned transition entries on the `human_driven` attribute,
//! which is what makes the counterfactual system behave differently.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::DEFAULT_ENUM_CAP;
use crate::model::{
    ActionId, AgentSpec, AttributeAssignment, ProfileLiteral, RewardTable, StateId, SystemSpec, TransitionEntry,
    TransitionSpec,
};

use super::ScenarioError;

pub const HUMAN_DRIVEN: usize = 0;
pub const HIGH_SPEED: usize = 1;

const NULL: ActionId = ActionId(0);
const FAST: ActionId = ActionId(1);
const SLOW: ActionId = ActionId(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Driver {
    Human,
    Ai,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedTier {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Car {
    pub driver: Driver,
    pub speed: SpeedTier,
}

impl Car {
    pub fn new(driver: Driver, speed: SpeedTier) -> Self {
        Self { driver, speed }
    }
}

impl fmt::Display for Car {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = match self.driver {
            Driver::Human => "human",
            Driver::Ai => "ai",
        };
        let s = match self.speed {
            SpeedTier::High => "high",
            SpeedTier::Low => "low",
        };
        write!(f, "{d}:{s}")
    }
}

/// Parses `human`, `ai`, `human:low`, `ai:high`, ...; speed defaults to high.
impl FromStr for Car {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (d, sp) = s.split_once(':').unwrap_or((s, "high"));
        let driver = match d.trim() {
            "human" => Driver::Human,
            "ai" => Driver::Ai,
            other => return Err(format!("unknown driver {other:?} (expected human or ai)")),
        };
        let speed = match sp.trim() {
            "high" => SpeedTier::High,
            "low" => SpeedTier::Low,
            other => return Err(format!("unknown speed tier {other:?} (expected high or low)")),
        };
        Ok(Car { driver, speed })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficParams {
    pub corridor_length: usize,
    pub cars: Vec<Car>,
    /// Success probability of an AI-driven car on the fast route.
    pub fast_route_gain: f64,
    /// Success probability of a human-driven car on the fast route.
    pub human_gain: f64,
    /// Success probability of any car on the slow route.
    pub slow_route_gain: f64,
    pub dedicated_lane: bool,
    pub arrival_reward: f64,
    pub step_cost: f64,
    /// Probability that an AI-driven car picks the fast route.
    pub ai_fast_prob: f64,
    /// Probability that a human-driven car picks the fast route.
    pub human_fast_prob: f64,
    /// When set, every car picks the fast route with this probability.
    pub fast_prob_override: Option<f64>,
    /// Multiplier on every gain of a low-speed car.
    pub low_speed_factor: f64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        Self {
            corridor_length: 3,
            cars: vec![Car::new(Driver::Human, SpeedTier::High), Car::new(Driver::Ai, SpeedTier::High)],
            fast_route_gain: 0.9,
            human_gain: 0.6,
            slow_route_gain: 0.5,
            dedicated_lane: false,
            arrival_reward: 10.0,
            step_cost: -1.0,
            ai_fast_prob: 0.8,
            human_fast_prob: 0.5,
            fast_prob_override: None,
            low_speed_factor: 0.5,
        }
    }
}

impl TrafficParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::InvalidParams(msg));
        if self.corridor_length == 0 {
            return bad("corridor_length must be at least 1".into());
        }
        if self.cars.is_empty() {
            return bad("at least one car is required".into());
        }
        for (name, g) in [
            ("fast_route_gain", self.fast_route_gain),
            ("human_gain", self.human_gain),
            ("slow_route_gain", self.slow_route_gain),
            ("low_speed_factor", self.low_speed_factor),
        ] {
            if !(g > 0.0 && g <= 1.0) {
                return bad(format!("{name} = {g} is outside (0, 1]"));
            }
        }
        let probs = [
            ("ai_fast_prob", Some(self.ai_fast_prob)),
            ("human_fast_prob", Some(self.human_fast_prob)),
            ("fast_prob_override", self.fast_prob_override),
        ];
        for (name, p) in probs {
            if let Some(p) = p {
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("{name} = {p} is outside [0, 1]"));
                }
            }
        }
        if !self.arrival_reward.is_finite() || !self.step_cost.is_finite() {
            return bad("rewards must be finite".into());
        }
        match self.state_count() {
            Some(n) if n <= DEFAULT_ENUM_CAP => Ok(()),
            _ => bad(format!(
                "({} + 1)^{} states exceed the cap of {}",
                self.corridor_length,
                self.cars.len(),
                DEFAULT_ENUM_CAP
            )),
        }
    }

    fn state_count(&self) -> Option<u64> {
        let base = u64::try_from(self.corridor_length).ok()?.checked_add(1)?;
        base.checked_pow(u32::try_from(self.cars.len()).ok()?)
    }

    fn fast_prob(&self, car: &Car) -> f64 {
        self.fast_prob_override.unwrap_or(match car.driver {
            Driver::Human => self.human_fast_prob,
            Driver::Ai => self.ai_fast_prob,
        })
    }

    /// Success probability of `car` on `route` if its driver is human (`human`).
    fn gain(&self, car: &Car, route: ActionId, human: bool) -> f64 {
        let base = if route == FAST {
            if human {
                self.human_gain
            } else if self.dedicated_lane {
                self.slow_route_gain
            } else {
                self.fast_route_gain
            }
        } else {
            self.slow_route_gain
        };
        match car.speed {
            SpeedTier::High => base,
            SpeedTier::Low => base * self.low_speed_factor,
        }
    }
}

struct Grid {
    base: usize,
    cars: usize,
}

impl Grid {
    fn positions(&self, state: usize) -> Vec<usize> {
        let mut rest = state;
        (0..self.cars)
            .map(|_| {
                let p = rest % self.base;
                rest /= self.base;
                p
            })
            .collect()
    }

    fn index(&self, positions: &[usize]) -> usize {
        positions.iter().rev().fold(0, |acc, &p| acc * self.base + p)
    }
}

/// Builds the corridor system. Car `i` is agent `i`; state indices encode the
/// position tuple with car 0 as the least significant digit.
pub fn build_traffic(params: &TrafficParams) -> Result<SystemSpec, ScenarioError> {
    params.validate()?;
    let l = params.corridor_length;
    let n = params.cars.len();
    let grid = Grid { base: l + 1, cars: n };
    let num_states = params.state_count().expect("validated") as usize;

    let agents: Vec<AgentSpec> = params
        .cars
        .iter()
        .enumerate()
        .map(|(i, car)| {
            let pf = params.fast_prob(car);
            let policy = (0..num_states)
                .map(|s| {
                    if grid.positions(s)[i] < l {
                        vec![0.0, pf, 1.0 - pf]
                    } else {
                        vec![1.0, 0.0, 0.0]
                    }
                })
                .collect();
            AgentSpec {
                name: Some(format!("car{i}")),
                attributes: AttributeAssignment::from_bools(&[
                    car.driver == Driver::Human,
                    car.speed == SpeedTier::High,
                ]),
                actions: vec![NULL, FAST, SLOW],
                policy,
                rewards: RewardTable::new(),
            }
        })
        .collect();

    let mut agents = agents;
    let mut entries = Vec::new();
    for s in 0..num_states {
        let pos = grid.positions(s);
        let active: Vec<usize> = (0..n).filter(|&i| pos[i] < l).collect();

        for successor in successors(&grid, &pos, &active) {
            let next_pos = grid.positions(successor);
            for &i in &active {
                let value = if next_pos[i] == l {
                    params.arrival_reward
                } else {
                    params.step_cost
                };
                agents[i].rewards.set(StateId(s), StateId(successor), value);
            }
        }

        let choices: Vec<Vec<ActionId>> = (0..n)
            .map(|i| if pos[i] < l { vec![FAST, SLOW] } else { vec![NULL] })
            .collect();
        crate::model::for_each_joint(&choices, |joint| {
            // Cars whose gain on their chosen route depends on who drives them.
            let sensitive: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&i| {
                    let car = &params.cars[i];
                    params.gain(car, joint[i], true) != params.gain(car, joint[i], false)
                })
                .collect();
            for assignment in 0..(1usize << sensitive.len()) {
                let mut human: Vec<bool> = params.cars.iter().map(|c| c.driver == Driver::Human).collect();
                let mut condition = Vec::with_capacity(sensitive.len());
                for (k, &i) in sensitive.iter().enumerate() {
                    let bit = (assignment >> (sensitive.len() - 1 - k)) & 1 == 1;
                    human[i] = bit;
                    condition.push(ProfileLiteral {
                        agent: i,
                        attribute: HUMAN_DRIVEN,
                        value: u8::from(bit),
                    });
                }
                let gains: Vec<f64> = active
                    .iter()
                    .map(|&i| params.gain(&params.cars[i], joint[i], human[i]))
                    .collect();
                entries.push(TransitionEntry {
                    state: StateId(s),
                    joint: joint.to_vec(),
                    condition,
                    next: next_distribution(&grid, &pos, &active, &gains),
                });
            }
        });
    }

    let attribute_sensitive = entries.iter().any(|e| !e.condition.is_empty());
    Ok(SystemSpec {
        num_states,
        state_names: Some(
            (0..num_states)
                .map(|s| {
                    grid.positions(s)
                        .iter()
                        .map(|p| p.to_string())
                        .collect::<Vec<_>>()
                        .join("-")
                })
                .collect(),
        ),
        start: StateId(0),
        action_names: vec!["null".into(), "advance_fast".into(), "advance_slow".into()],
        attribute_names: vec!["human_driven".into(), "high_speed".into()],
        protected: BTreeSet::from([HUMAN_DRIVEN]),
        agents,
        transition: TransitionSpec {
            attribute_sensitive,
            entries,
        },
    })
}

/// Every state reachable in one step: each active car advances or stays.
fn successors(grid: &Grid, pos: &[usize], active: &[usize]) -> Vec<usize> {
    (0..(1usize << active.len()))
        .map(|mask| {
            let mut next = pos.to_vec();
            for (k, &i) in active.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    next[i] += 1;
                }
            }
            grid.index(&next)
        })
        .collect()
}

fn next_distribution(grid: &Grid, pos: &[usize], active: &[usize], gains: &[f64]) -> Vec<(StateId, f64)> {
    let mut dist: BTreeMap<usize, f64> = BTreeMap::new();
    for mask in 0..(1usize << active.len()) {
        let mut next = pos.to_vec();
        let mut p = 1.0;
        for (k, &i) in active.iter().enumerate() {
            if mask >> k & 1 == 1 {
                next[i] += 1;
                p *= gains[k];
            } else {
                p *= 1.0 - gains[k];
            }
        }
        if p > 0.0 {
            *dist.entry(grid.index(&next)).or_insert(0.0) += p;
        }
    }
    dist.into_iter().map(|(s, p)| (StateId(s), p)).collect()
}
