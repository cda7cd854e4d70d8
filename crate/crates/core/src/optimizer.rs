//! Search over environment configurations for lower measured unfairness.
//!
//! A [`ConfigSpace`] pairs a list of typed parameters with a [`Binder`] that
//! turns a parameter vector into a system. The objective is the absolute
//! (or signed) fairness measure, optionally minus a welfare term. Three
//! searches are provided: exhaustive grid, uniform random, and a (mu+lambda)
//! evolution strategy. Evaluations inside a batch run in parallel; traces are
//! assembled in evaluation-index order so results do not depend on the
//! number of workers.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, EvalConfig, Method, MetricError, MetricKind};
use crate::model::{validate_system, StateId, SystemSpec};
use crate::scenario::{build_traffic, TrafficParams};
use crate::stream::{sequential_stream, SampleRng};

/// Default limit on the number of grid points.
pub const DEFAULT_GRID_CAP: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error("BIND_FAILED: {0}")]
    BindFailed(String),
    #[error("GRID_TOO_LARGE: {size} points exceed the cap of {cap}")]
    GridTooLarge { size: String, cap: u64 },
    #[error("INVALID_SPACE: {0}")]
    InvalidSpace(String),
    #[error("INVALID_CONFIG: {0}")]
    InvalidConfig(String),
    #[error("INVALID_ARGUMENT: {0}")]
    InvalidArgument(String),
    #[error("UNKNOWN_ATTRIBUTE: {0:?}")]
    UnknownAttribute(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl OptimizeError {
    pub fn code(&self) -> &'static str {
        match self {
            OptimizeError::BindFailed(_) => "BIND_FAILED",
            OptimizeError::GridTooLarge { .. } => "GRID_TOO_LARGE",
            OptimizeError::InvalidSpace(_) => "INVALID_SPACE",
            OptimizeError::InvalidConfig(_) => "INVALID_CONFIG",
            OptimizeError::InvalidArgument(_) => "INVALID_ARGUMENT",
            OptimizeError::UnknownAttribute(_) => "UNKNOWN_ATTRIBUTE",
            OptimizeError::Metric(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ParamKind {
    Boolean,
    Integer { lo: i64, hi: i64 },
    Real { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Real(f64),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Real(x) => write!(f, "{x}"),
        }
    }
}

impl ParamValue {
    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            ParamValue::Bool(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match *self {
            ParamValue::Int(i) => Some(i),
            _ => None,
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match *self {
            ParamValue::Real(x) => Some(x),
            _ => None,
        }
    }
}

/// Turns a parameter vector into a system.
pub trait Binder: Send + Sync {
    fn bind(&self, config: &[ParamValue]) -> Result<SystemSpec, String>;
}

#[derive(Clone)]
pub struct ConfigSpace {
    params: Vec<ParamSpec>,
    binder: Arc<dyn Binder>,
}

impl fmt::Debug for ConfigSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConfigSpace").field("params", &self.params).finish_non_exhaustive()
    }
}

impl ConfigSpace {
    pub fn new(params: Vec<ParamSpec>, binder: Arc<dyn Binder>) -> Result<Self, OptimizeError> {
        let mut names = BTreeSet::new();
        for p in &params {
            if !names.insert(p.name.as_str()) {
                return Err(OptimizeError::InvalidSpace(format!("duplicate parameter {:?}", p.name)));
            }
            match p.kind {
                ParamKind::Integer { lo, hi } if lo > hi => {
                    return Err(OptimizeError::InvalidSpace(format!("{}: lo {lo} > hi {hi}", p.name)))
                }
                ParamKind::Real { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                    return Err(OptimizeError::InvalidSpace(format!("{}: bad range [{lo}, {hi}]", p.name)))
                }
                _ => {}
            }
        }
        Ok(Self { params, binder })
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn check(&self, config: &[ParamValue]) -> Result<(), OptimizeError> {
        if config.len() != self.params.len() {
            return Err(OptimizeError::InvalidConfig(format!(
                "{} values for {} parameters",
                config.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter().zip(config) {
            let ok = match (p.kind, v) {
                (ParamKind::Boolean, ParamValue::Bool(_)) => true,
                (ParamKind::Integer { lo, hi }, ParamValue::Int(i)) => (lo..=hi).contains(i),
                (ParamKind::Real { lo, hi }, ParamValue::Real(x)) => (lo..=hi).contains(x),
                _ => false,
            };
            if !ok {
                return Err(OptimizeError::InvalidConfig(format!("{} = {v} is out of range or mistyped", p.name)));
            }
        }
        Ok(())
    }

    pub fn bind(&self, config: &[ParamValue]) -> Result<SystemSpec, OptimizeError> {
        self.check(config)?;
        let spec = self.binder.bind(config).map_err(OptimizeError::BindFailed)?;
        let violations = validate_system(&spec);
        if let Some(first) = violations.first() {
            return Err(OptimizeError::BindFailed(format!(
                "bound system has {} violation(s), first: {first}",
                violations.len()
            )));
        }
        Ok(spec)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<ParamValue> {
        self.params
            .iter()
            .map(|p| match p.kind {
                ParamKind::Boolean => ParamValue::Bool(rng.random_bool(0.5)),
                ParamKind::Integer { lo, hi } => ParamValue::Int(rng.random_range(lo..=hi)),
                ParamKind::Real { lo, hi } => {
                    let u: f64 = rng.random();
                    ParamValue::Real((lo + (hi - lo) * u).clamp(lo, hi))
                }
            })
            .collect()
    }
}

/// What to minimize.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub metric: MetricKind,
    pub protected: String,
    pub legit_factors: Vec<String>,
    pub eval: EvalConfig,
    /// Weight of the welfare term (total exact expected reward), subtracted.
    pub lambda: f64,
    /// Minimize the signed measure instead of its absolute value.
    pub signed: bool,
}

impl Objective {
    pub fn new(metric: MetricKind, protected: impl Into<String>, eval: EvalConfig) -> Self {
        Self {
            metric,
            protected: protected.into(),
            legit_factors: Vec::new(),
            eval,
            lambda: 0.0,
            signed: false,
        }
    }
}

/// Objective value of one configuration.
pub fn evaluate_config(space: &ConfigSpace, objective: &Objective, config: &[ParamValue]) -> Result<f64, OptimizeError> {
    if objective.lambda.is_nan() || objective.lambda < 0.0 {
        return Err(OptimizeError::InvalidArgument("lambda must be non-negative".into()));
    }
    let spec = space.bind(config)?;
    let lookup = |name: &str| {
        spec.attribute_index(name)
            .ok_or_else(|| OptimizeError::UnknownAttribute(name.to_string()))
    };
    let pr = lookup(&objective.protected)?;
    let lf = objective
        .legit_factors
        .iter()
        .map(|n| lookup(n))
        .collect::<Result<Vec<_>, _>>()?;
    let report = metrics::evaluate(&spec, objective.metric, pr, &lf, &objective.eval)?;
    let mut value = if objective.signed {
        report.measure
    } else {
        report.measure.abs()
    };
    if objective.lambda > 0.0 {
        let exact = EvalConfig {
            method: Method::Exact,
            ..objective.eval
        };
        let welfare: f64 = metrics::expected_rewards(&spec, &exact)?.iter().sum();
        value -= objective.lambda * welfare;
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub index: usize,
    pub config: Vec<ParamValue>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub algorithm: String,
    pub parameters: Vec<String>,
    pub best_config: Vec<ParamValue>,
    pub best_value: f64,
    pub best_index: usize,
    pub trace: Vec<TraceEntry>,
    pub budget_used: usize,
    pub seed: u64,
}

impl OptimizationResult {
    fn from_trace(algorithm: &str, space: &ConfigSpace, trace: Vec<TraceEntry>, seed: u64) -> Self {
        let mut best = 0;
        for (i, t) in trace.iter().enumerate() {
            if t.value < trace[best].value {
                best = i;
            }
        }
        Self {
            algorithm: algorithm.to_string(),
            parameters: space.names(),
            best_config: trace[best].config.clone(),
            best_value: trace[best].value,
            best_index: best,
            budget_used: trace.len(),
            trace,
            seed,
        }
    }

    /// Best value seen up to and including each evaluation.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.trace
            .iter()
            .scan(f64::INFINITY, |best, t| {
                *best = best.min(t.value);
                Some(*best)
            })
            .collect()
    }
}

/// Evaluates `configs` in parallel, returning values in input order. The
/// first failing configuration (in input order) determines the error.
fn evaluate_batch(
    space: &ConfigSpace,
    objective: &Objective,
    configs: &[Vec<ParamValue>],
) -> Result<Vec<f64>, OptimizeError> {
    let results: Vec<Result<f64, OptimizeError>> = configs
        .par_iter()
        .map(|c| evaluate_config(space, objective, c))
        .collect();
    results.into_iter().collect()
}

fn append(trace: &mut Vec<TraceEntry>, configs: Vec<Vec<ParamValue>>, values: Vec<f64>) {
    for (config, value) in configs.into_iter().zip(values) {
        let index = trace.len();
        trace.push(TraceEntry { index, config, value });
    }
}

fn axis(kind: ParamKind, resolution: usize) -> Vec<ParamValue> {
    match kind {
        ParamKind::Boolean => vec![ParamValue::Bool(false), ParamValue::Bool(true)],
        ParamKind::Integer { lo, hi } => (lo..=hi).map(ParamValue::Int).collect(),
        ParamKind::Real { lo, hi } => {
            if lo == hi || resolution == 1 {
                return vec![ParamValue::Real(lo)];
            }
            let last = (resolution - 1) as f64;
            (0..resolution)
                .map(|i| {
                    let x = if i + 1 == resolution {
                        hi
                    } else {
                        lo + (hi - lo) * (i as f64 / last)
                    };
                    ParamValue::Real(x)
                })
                .collect()
        }
    }
}

/// Exhaustive search over the Cartesian grid (first parameter varying
/// slowest). Reals use `resolution` evenly spaced points including both
/// endpoints. Ties keep the first configuration in grid order.
pub fn grid_search(
    space: &ConfigSpace,
    objective: &Objective,
    resolution: usize,
    max_points: u64,
) -> Result<OptimizationResult, OptimizeError> {
    if resolution == 0 && space.params.iter().any(|p| matches!(p.kind, ParamKind::Real { .. })) {
        return Err(OptimizeError::InvalidArgument("resolution must be at least 1".into()));
    }
    let axes: Vec<Vec<ParamValue>> = space.params.iter().map(|p| axis(p.kind, resolution)).collect();
    let size = axes
        .iter()
        .try_fold(1u64, |acc, a| acc.checked_mul(a.len() as u64));
    let size = match size {
        Some(s) if s <= max_points => s as usize,
        Some(s) => {
            return Err(OptimizeError::GridTooLarge {
                size: s.to_string(),
                cap: max_points,
            })
        }
        None => {
            return Err(OptimizeError::GridTooLarge {
                size: "overflow".into(),
                cap: max_points,
            })
        }
    };
    let configs: Vec<Vec<ParamValue>> = (0..size)
        .map(|mut k| {
            let mut config = vec![ParamValue::Bool(false); axes.len()];
            for (slot, a) in config.iter_mut().zip(&axes).rev() {
                *slot = a[k % a.len()];
                k /= a.len();
            }
            config
        })
        .collect();
    let values = evaluate_batch(space, objective, &configs)?;
    let mut trace = Vec::with_capacity(size);
    append(&mut trace, configs, values);
    Ok(OptimizationResult::from_trace("grid", space, trace, 0))
}

/// `budget` uniformly sampled configurations.
pub fn random_search(
    space: &ConfigSpace,
    objective: &Objective,
    budget: usize,
    seed: u64,
) -> Result<OptimizationResult, OptimizeError> {
    if budget == 0 {
        return Err(OptimizeError::InvalidArgument("budget must be at least 1".into()));
    }
    let mut rng = sequential_stream(seed);
    let configs: Vec<Vec<ParamValue>> = (0..budget).map(|_| space.sample(&mut rng)).collect();
    let values = evaluate_batch(space, objective, &configs)?;
    let mut trace = Vec::with_capacity(budget);
    append(&mut trace, configs, values);
    Ok(OptimizationResult::from_trace("random", space, trace, seed))
}

/// Hyperparameters of the (mu+lambda) evolution strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionParams {
    pub budget: usize,
    pub population: usize,
    pub offspring: usize,
    pub mutation_scale: f64,
}

impl Default for EvolutionParams {
    fn default() -> Self {
        Self {
            budget: 300,
            population: 5,
            offspring: 10,
            mutation_scale: 0.1,
        }
    }
}

fn mutate(space: &ConfigSpace, parent: &[ParamValue], sigma: f64, rng: &mut SampleRng) -> Vec<ParamValue> {
    let flip = sigma.clamp(0.0, 1.0);
    space
        .params
        .iter()
        .zip(parent)
        .map(|(p, &v)| match (p.kind, v) {
            (ParamKind::Boolean, ParamValue::Bool(b)) => ParamValue::Bool(if rng.random_bool(flip) { !b } else { b }),
            (ParamKind::Integer { lo, hi }, ParamValue::Int(i)) => {
                let moved = if rng.random_bool(flip) {
                    if rng.random_bool(0.5) {
                        i.saturating_add(1)
                    } else {
                        i.saturating_sub(1)
                    }
                } else {
                    i
                };
                ParamValue::Int(moved.clamp(lo, hi))
            }
            (ParamKind::Real { lo, hi }, ParamValue::Real(x)) => {
                let z: f64 = rng.sample(StandardNormal);
                ParamValue::Real((x + sigma * (hi - lo) * z).clamp(lo, hi))
            }
            _ => v,
        })
        .collect()
}

/// (mu+lambda) evolution strategy: `population` uniform initial configs,
/// then generations of `offspring` mutants of uniformly chosen parents;
/// survivors are the best `population` of parents and offspring. Stops once
/// `budget` evaluations are spent.
pub fn evolutionary_search(
    space: &ConfigSpace,
    objective: &Objective,
    params: EvolutionParams,
    seed: u64,
) -> Result<OptimizationResult, OptimizeError> {
    let EvolutionParams {
        budget,
        population,
        offspring,
        mutation_scale,
    } = params;
    if population == 0 || offspring == 0 {
        return Err(OptimizeError::InvalidArgument("population and offspring must be at least 1".into()));
    }
    if budget < population {
        return Err(OptimizeError::InvalidArgument("budget must be at least the population size".into()));
    }
    if mutation_scale.is_nan() || mutation_scale < 0.0 {
        return Err(OptimizeError::InvalidArgument("mutation scale must be non-negative".into()));
    }

    let mut rng = sequential_stream(seed);
    let mut trace = Vec::with_capacity(budget);

    let initial: Vec<Vec<ParamValue>> = (0..population).map(|_| space.sample(&mut rng)).collect();
    let values = evaluate_batch(space, objective, &initial)?;
    append(&mut trace, initial, values);
    let mut parents: Vec<usize> = (0..population).collect();

    while trace.len() < budget {
        let k = offspring.min(budget - trace.len());
        let children: Vec<Vec<ParamValue>> = (0..k)
            .map(|_| {
                let parent = parents[rng.random_range(0..parents.len())];
                mutate(space, &trace[parent].config, mutation_scale, &mut rng)
            })
            .collect();
        let values = evaluate_batch(space, objective, &children)?;
        let first_child = trace.len();
        append(&mut trace, children, values);

        let mut pool: Vec<usize> = parents.iter().copied().chain(first_child..trace.len()).collect();
        pool.sort_by(|&a, &b| trace[a].value.total_cmp(&trace[b].value).then(a.cmp(&b)));
        pool.truncate(population);
        parents = pool;
    }
    Ok(OptimizationResult::from_trace("evolutionary", space, trace, seed))
}

/// Names of the built-in scenario families.
pub const FAMILIES: &[&str] = &["traffic"];

/// Traffic parameters that can be exposed to a search.
const TRAFFIC_PARAMS: &[(&str, ParamKind)] = &[
    ("dedicated_lane", ParamKind::Boolean),
    ("corridor_length", ParamKind::Integer { lo: 1, hi: 4 }),
    ("fast_route_gain", ParamKind::Real { lo: 0.05, hi: 1.0 }),
    ("human_gain", ParamKind::Real { lo: 0.05, hi: 1.0 }),
    ("slow_route_gain", ParamKind::Real { lo: 0.05, hi: 1.0 }),
    ("low_speed_factor", ParamKind::Real { lo: 0.05, hi: 1.0 }),
    ("ai_fast_prob", ParamKind::Real { lo: 0.0, hi: 1.0 }),
    ("human_fast_prob", ParamKind::Real { lo: 0.0, hi: 1.0 }),
    ("arrival_reward", ParamKind::Real { lo: 0.0, hi: 20.0 }),
    ("step_cost", ParamKind::Real { lo: -5.0, hi: 0.0 }),
];

/// Default search kind of a traffic parameter, if it is exposable.
pub fn traffic_param_kind(name: &str) -> Option<ParamKind> {
    TRAFFIC_PARAMS.iter().find(|(n, _)| *n == name).map(|&(_, k)| k)
}

struct TrafficBinder {
    base: TrafficParams,
    names: Vec<String>,
}

impl Binder for TrafficBinder {
    fn bind(&self, config: &[ParamValue]) -> Result<SystemSpec, String> {
        let mut p = self.base.clone();
        for (name, value) in self.names.iter().zip(config) {
            let real = || value.as_real().ok_or_else(|| format!("{name} expects a real value"));
            match name.as_str() {
                "dedicated_lane" => p.dedicated_lane = value.as_bool().ok_or("dedicated_lane expects a boolean")?,
                "corridor_length" => {
                    let v = value.as_int().ok_or("corridor_length expects an integer")?;
                    p.corridor_length = usize::try_from(v).map_err(|_| "corridor_length must be positive")?;
                }
                "fast_route_gain" => p.fast_route_gain = real()?,
                "human_gain" => p.human_gain = real()?,
                "slow_route_gain" => p.slow_route_gain = real()?,
                "low_speed_factor" => p.low_speed_factor = real()?,
                "ai_fast_prob" => p.ai_fast_prob = real()?,
                "human_fast_prob" => p.human_fast_prob = real()?,
                "arrival_reward" => p.arrival_reward = real()?,
                "step_cost" => p.step_cost = real()?,
                other => return Err(format!("unknown traffic parameter {other:?}")),
            }
        }
        build_traffic(&p).map_err(|e| e.to_string())
    }
}

/// A search space over the named traffic parameters around `base`. Each
/// entry may override the default range.
pub fn traffic_space(base: TrafficParams, params: &[(String, Option<ParamKind>)]) -> Result<ConfigSpace, OptimizeError> {
    let specs = params
        .iter()
        .map(|(name, kind)| {
            let default = traffic_param_kind(name)
                .ok_or_else(|| OptimizeError::InvalidSpace(format!("unknown traffic parameter {name:?}")))?;
            let kind = kind.unwrap_or(default);
            if std::mem::discriminant(&kind) != std::mem::discriminant(&default) {
                return Err(OptimizeError::InvalidSpace(format!("{name}: range has the wrong type")));
            }
            Ok(ParamSpec {
                name: name.clone(),
                kind,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let binder = TrafficBinder {
        base,
        names: params.iter().map(|(n, _)| n.clone()).collect(),
    };
    ConfigSpace::new(specs, Arc::new(binder))
}

struct StartStateBinder {
    spec: SystemSpec,
}

impl Binder for StartStateBinder {
    fn bind(&self, config: &[ParamValue]) -> Result<SystemSpec, String> {
        let mut spec = self.spec.clone();
        if let Some(v) = config.first() {
            let start = v.as_int().ok_or("start expects an integer")?;
            spec.start = StateId(usize::try_from(start).map_err(|_| "start must be non-negative")?);
        }
        Ok(spec)
    }
}

/// A one-parameter space over the start state of a loaded system.
pub fn start_state_space(spec: SystemSpec) -> Result<ConfigSpace, OptimizeError> {
    let hi = spec.num_states.saturating_sub(1) as i64;
    ConfigSpace::new(
        vec![ParamSpec {
            name: "start".into(),
            kind: ParamKind::Integer { lo: 0, hi },
        }],
        Arc::new(StartStateBinder { spec }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::parity_gap_space;

    fn synthetic_objective() -> Objective {
        Objective::new(MetricKind::DemPar, "protected", EvalConfig::exact(1))
    }

    #[test]
    fn synthetic_objective_is_gap_from_half() {
        let space = parity_gap_space();
        let obj = synthetic_objective();
        for p in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let v = evaluate_config(&space, &obj, &[ParamValue::Real(p)]).unwrap();
            assert!((v - (p - 0.5f64).abs()).abs() < 1e-15, "{p}: {v}");
        }
    }

    #[test]
    fn out_of_range_config_is_rejected() {
        let space = parity_gap_space();
        let err = evaluate_config(&space, &synthetic_objective(), &[ParamValue::Real(1.5)]).unwrap_err();
        assert_eq!(err.code(), "INVALID_CONFIG");
        let err = evaluate_config(&space, &synthetic_objective(), &[ParamValue::Int(0)]).unwrap_err();
        assert_eq!(err.code(), "INVALID_CONFIG");
    }

    #[test]
    fn one_boolean_grid_has_two_points() {
        let space = traffic_space(TrafficParams::default(), &[("dedicated_lane".into(), None)]).unwrap();
        let obj = Objective::new(MetricKind::DemPar, "human_driven", EvalConfig::exact(2));
        let r = grid_search(&space, &obj, 5, DEFAULT_GRID_CAP).unwrap();
        assert_eq!(r.trace.len(), 2);
        assert_eq!(r.trace[0].config, vec![ParamValue::Bool(false)]);
    }

    #[test]
    fn empty_space_evaluates_default() {
        let space = traffic_space(TrafficParams::default(), &[]).unwrap();
        let obj = Objective::new(MetricKind::DemPar, "human_driven", EvalConfig::exact(2));
        let r = grid_search(&space, &obj, 3, DEFAULT_GRID_CAP).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert!(r.best_config.is_empty());
    }

    #[test]
    fn grid_too_large() {
        let space = parity_gap_space();
        let err = grid_search(&space, &synthetic_objective(), 1000, 10).unwrap_err();
        assert_eq!(err.code(), "GRID_TOO_LARGE");
    }

    #[test]
    fn grid_includes_endpoints() {
        let pts = axis(ParamKind::Real { lo: -1.0, hi: 2.0 }, 4);
        assert_eq!(pts, vec![-1.0, 0.0, 1.0, 2.0].into_iter().map(ParamValue::Real).collect::<Vec<_>>());
        assert_eq!(axis(ParamKind::Integer { lo: 2, hi: 4 }, 9).len(), 3);
    }

    #[test]
    fn random_search_budget_one() {
        let space = parity_gap_space();
        let r = random_search(&space, &synthetic_objective(), 1, 4).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.best_config, r.trace[0].config);
        assert_eq!(r.best_value, r.trace[0].value);
    }

    #[test]
    fn random_search_is_reproducible_and_effective() {
        let space = parity_gap_space();
        let a = random_search(&space, &synthetic_objective(), 200, 3).unwrap();
        let b = random_search(&space, &synthetic_objective(), 200, 3).unwrap();
        assert_eq!(a, b);
        let p = a.best_config[0].as_real().unwrap();
        assert!((p - 0.5).abs() <= 0.01, "{p}");
        assert!(a.best_value <= 0.01);
    }

    #[test]
    fn evolution_without_mutation_stays_put() {
        let space = parity_gap_space();
        let params = EvolutionParams {
            budget: 20,
            population: 1,
            offspring: 1,
            mutation_scale: 0.0,
        };
        let r = evolutionary_search(&space, &synthetic_objective(), params, 8).unwrap();
        assert_eq!(r.trace.len(), 20);
        assert_eq!(r.best_value, r.trace[0].value);
        assert!(r.trace.iter().all(|t| t.config == r.trace[0].config));
    }

    #[test]
    fn evolution_best_so_far_is_monotone() {
        let space = parity_gap_space();
        let r = evolutionary_search(&space, &synthetic_objective(), EvolutionParams::default(), 5).unwrap();
        assert!(r.trace.len() <= 300);
        let best = r.best_so_far();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.best_value <= 0.01, "{}", r.best_value);
    }

    #[test]
    fn evolution_rejects_bad_hyperparameters() {
        let space = parity_gap_space();
        let bad = EvolutionParams {
            budget: 2,
            population: 5,
            ..EvolutionParams::default()
        };
        assert_eq!(
            evolutionary_search(&space, &synthetic_objective(), bad, 0).unwrap_err().code(),
            "INVALID_ARGUMENT"
        );
    }

    #[test]
    fn traffic_space_rejects_unknown_and_mistyped() {
        assert!(traffic_space(TrafficParams::default(), &[("wings".into(), None)]).is_err());
        let mistyped = [("dedicated_lane".to_string(), Some(ParamKind::Real { lo: 0.0, hi: 1.0 }))];
        assert!(traffic_space(TrafficParams::default(), &mistyped).is_err());
    }

    #[test]
    fn bind_failure_is_reported() {
        let space = traffic_space(
            TrafficParams::default(),
            &[("corridor_length".into(), Some(ParamKind::Integer { lo: 0, hi: 1 }))],
        )
        .unwrap();
        let obj = Objective::new(MetricKind::DemPar, "human_driven", EvalConfig::exact(1));
        let err = evaluate_config(&space, &obj, &[ParamValue::Int(0)]).unwrap_err();
        assert_eq!(err.code(), "BIND_FAILED");
    }

    #[test]
    fn zero_reward_system_scores_zero_everywhere() {
        let space = traffic_space(
            TrafficParams {
                arrival_reward: 0.0,
                step_cost: 0.0,
                ..TrafficParams::default()
            },
            &[("dedicated_lane".into(), None), ("human_gain".into(), None)],
        )
        .unwrap();
        let obj = Objective::new(MetricKind::DemPar, "human_driven", EvalConfig::exact(2));
        let r = grid_search(&space, &obj, 3, DEFAULT_GRID_CAP).unwrap();
        assert!(r.trace.iter().all(|t| t.value == 0.0));
    }

    #[test]
    fn welfare_term_is_subtracted() {
        let space = parity_gap_space();
        let mut obj = synthetic_objective();
        obj.lambda = 2.0;
        // expected rewards at horizon 1 are p and 0.5
        let v = evaluate_config(&space, &obj, &[ParamValue::Real(0.75)]).unwrap();
        assert!((v - (0.25 - 2.0 * 1.25)).abs() < 1e-12, "{v}");
        obj.lambda = -1.0;
        assert_eq!(evaluate_config(&space, &obj, &[ParamValue::Real(0.75)]).unwrap_err().code(), "INVALID_ARGUMENT");
    }

    #[test]
    fn start_state_space_moves_start() {
        let spec = crate::fixtures::coin(0.7);
        let space = start_state_space(spec).unwrap();
        let bound = space.bind(&[ParamValue::Int(1)]).unwrap();
        assert_eq!(bound.start, StateId(1));
    }
}
