//! Demographic parity, counterfactual fairness, and conditional statistical
//! parity over agents' expected rewards.
//!
//! Each measure is the signed sum of per-pair (or per-agent) expected-reward
//! differences. Expected rewards for every agent are computed once per system
//! and reused for all pairs.
//!
//! The counterfactual measure sums only over agents that hold the protected
//! attribute in the factual system, while counterfactual fairness itself is
//! a statement about every agent. Reports therefore carry both `satisfied`
//! (the verdict on the measure) and `definition_holds` (the verdict on every
//! pair, or for counterfactual fairness every agent, individually).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{mean_and_std_error, Dynamics, EngineError, RewardSamples, Z_95};
use crate::model::SystemSpec;

/// Default absolute tolerance for satisfaction verdicts.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MetricKind {
    DemPar,
    CountFair,
    CondSp,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::DemPar => "DEM_PAR",
            MetricKind::CountFair => "COUNT_FAIR",
            MetricKind::CondSp => "COND_SP",
        }
    }
}

/// How expected rewards are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Method {
    #[serde(rename = "EXACT")]
    Exact,
    #[serde(rename = "MC")]
    MonteCarlo { samples: usize, seed: u64 },
}

/// Horizon, method, verdict tolerance, and enumeration cap for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub horizon: usize,
    pub method: Method,
    pub tolerance: f64,
    pub enum_cap: u64,
}

impl EvalConfig {
    pub fn exact(horizon: usize) -> Self {
        Self {
            horizon,
            method: Method::Exact,
            tolerance: DEFAULT_TOLERANCE,
            enum_cap: crate::engine::DEFAULT_ENUM_CAP,
        }
    }

    pub fn monte_carlo(horizon: usize, samples: usize, seed: u64) -> Self {
        Self {
            method: Method::MonteCarlo { samples, seed },
            ..Self::exact(horizon)
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_enum_cap(mut self, cap: u64) -> Self {
        self.enum_cap = cap;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("INDEX_OUT_OF_RANGE: attribute {index} (system has {limit})")]
    AttributeOutOfRange { index: usize, limit: usize },
    #[error("NOT_PROTECTED: attribute {0} is not a protected attribute")]
    NotProtected(usize),
    #[error("LF_OVERLAPS_PROTECTED: legitimate factors {0:?} include protected attributes")]
    LfOverlapsProtected(Vec<usize>),
    #[error("INVALID_ARGUMENT: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl MetricError {
    pub fn code(&self) -> &'static str {
        match self {
            MetricError::AttributeOutOfRange { .. } => "INDEX_OUT_OF_RANGE",
            MetricError::NotProtected(_) => "NOT_PROTECTED",
            MetricError::LfOverlapsProtected(_) => "LF_OVERLAPS_PROTECTED",
            MetricError::InvalidArgument(_) => "INVALID_ARGUMENT",
            MetricError::Engine(e) => e.code(),
        }
    }
}

/// One term of a measure. For pairwise metrics `x` holds the protected
/// attribute and `y` does not; for counterfactual fairness `x == y` names the
/// agent whose factual and counterfactual rewards are compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub x: usize,
    pub y: usize,
    pub contribution: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub metric: MetricKind,
    pub protected_attribute: usize,
    pub protected_name: String,
    pub legitimate_factors: Vec<usize>,
    pub horizon: usize,
    pub method: Method,
    /// Signed sum of the contributions.
    pub measure: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ci_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ci_high: Option<f64>,
    pub pairs: Vec<Contribution>,
    pub pair_count: usize,
    pub satisfied: bool,
    pub definition_holds: bool,
    pub tolerance: f64,
    pub mean_contribution: f64,
}

impl FairnessReport {
    /// Checks the report's internal consistency.
    pub fn check_invariants(&self) -> Result<(), String> {
        let sum = self.pairs.iter().fold(0.0, |acc, c| acc + c.contribution);
        if sum.to_bits() != self.measure.to_bits() {
            return Err(format!("measure {} differs from contribution sum {}", self.measure, sum));
        }
        if self.pair_count != self.pairs.len() {
            return Err("pair_count differs from pairs length".into());
        }
        let expected = match (self.method, self.ci_low, self.ci_high) {
            (Method::Exact, _, _) => self.measure.abs() <= self.tolerance,
            (Method::MonteCarlo { .. }, Some(lo), Some(hi)) => interval_verdict(lo, hi, self.tolerance),
            (Method::MonteCarlo { .. }, _, _) => return Err("Monte Carlo report without interval".into()),
        };
        if expected != self.satisfied {
            return Err("satisfied flag disagrees with the verdict rule".into());
        }
        if self.legitimate_factors.contains(&self.protected_attribute) {
            return Err("legitimate factors contain the protected attribute".into());
        }
        Ok(())
    }
}

/// Satisfied when the interval for the measure contains 0 or the interval of
/// its absolute value starts at or below `tolerance`.
fn interval_verdict(lo: f64, hi: f64, tolerance: f64) -> bool {
    if lo <= 0.0 && 0.0 <= hi {
        return true;
    }
    lo.abs().min(hi.abs()) <= tolerance
}

fn check_protected(spec: &SystemSpec, pr: usize) -> Result<(), MetricError> {
    let limit = spec.num_attributes();
    if pr >= limit {
        return Err(MetricError::AttributeOutOfRange { index: pr, limit });
    }
    if !spec.is_protected(pr) {
        return Err(MetricError::NotProtected(pr));
    }
    Ok(())
}

fn check_factors(spec: &SystemSpec, lf: &[usize]) -> Result<(), MetricError> {
    let limit = spec.num_attributes();
    if let Some(&bad) = lf.iter().find(|&&f| f >= limit) {
        return Err(MetricError::AttributeOutOfRange { index: bad, limit });
    }
    let overlap: Vec<usize> = lf.iter().copied().filter(|&f| spec.is_protected(f)).collect();
    if !overlap.is_empty() {
        return Err(MetricError::LfOverlapsProtected(overlap));
    }
    Ok(())
}

/// Ordered agent pairs `(x, y)` with x holding `pr`, y not, agreeing on every
/// other attribute, and (when `lf` is non-empty) both holding every factor.
pub fn matched_pairs(spec: &SystemSpec, pr: usize, lf: &[usize]) -> Result<Vec<(usize, usize)>, MetricError> {
    check_protected(spec, pr)?;
    check_factors(spec, lf)?;
    let n = spec.num_agents();
    let mut pairs = Vec::new();
    for x in 0..n {
        for y in 0..n {
            if x == y || !crate::model::matches_except(spec, x, y, pr).expect("indices checked") {
                continue;
            }
            let (ax, ay) = (&spec.agents[x].attributes, &spec.agents[y].attributes);
            if lf.iter().all(|&f| ax.holds(f) && ay.holds(f)) {
                pairs.push((x, y));
            }
        }
    }
    Ok(pairs)
}

/// The system with every agent's `pr` bit flipped; everything else,
/// including the transformer's entries, is carried over unchanged.
pub fn counterfactual_system(spec: &SystemSpec, pr: usize) -> Result<SystemSpec, MetricError> {
    check_protected(spec, pr)?;
    let mut out = spec.clone();
    for agent in &mut out.agents {
        agent.attributes = agent.attributes.flipped(pr);
    }
    Ok(out)
}

/// Expected rewards of every agent in one system.
enum Estimates {
    Exact(Vec<f64>),
    Sampled { draws: RewardSamples, means: Vec<f64> },
}

impl Estimates {
    fn compute(spec: &SystemSpec, cfg: &EvalConfig) -> Result<Self, MetricError> {
        let dynamics = Dynamics::new(spec)?;
        match cfg.method {
            Method::Exact => Ok(Estimates::Exact(dynamics.expected_rewards_exact(cfg.horizon, cfg.enum_cap)?)),
            Method::MonteCarlo { samples, seed } => {
                if samples < 2 {
                    return Err(MetricError::InvalidArgument("Monte Carlo needs at least 2 samples".into()));
                }
                let draws = dynamics.sample_rewards(cfg.horizon, samples, seed)?;
                let means = (0..spec.num_agents()).map(|x| draws.estimate(x).mean).collect();
                Ok(Estimates::Sampled { draws, means })
            }
        }
    }

    fn means(&self) -> &[f64] {
        match self {
            Estimates::Exact(v) => v,
            Estimates::Sampled { means, .. } => means,
        }
    }

    fn draws(&self) -> Option<&RewardSamples> {
        match self {
            Estimates::Exact(_) => None,
            Estimates::Sampled { draws, .. } => Some(draws),
        }
    }
}

/// Expected reward of every agent under `cfg`'s method (means for Monte Carlo).
pub fn expected_rewards(spec: &SystemSpec, cfg: &EvalConfig) -> Result<Vec<f64>, MetricError> {
    Ok(Estimates::compute(spec, cfg)?.means().to_vec())
}

fn check_config(cfg: &EvalConfig) -> Result<(), MetricError> {
    if cfg.tolerance.is_nan() || cfg.tolerance < 0.0 {
        return Err(MetricError::InvalidArgument("tolerance must be non-negative".into()));
    }
    if cfg.horizon == 0 {
        return Err(MetricError::InvalidArgument("horizon must be at least 1".into()));
    }
    Ok(())
}

struct Terms {
    contributions: Vec<Contribution>,
    /// Per-sample value of the whole measure (Monte Carlo only).
    per_sample: Option<Vec<f64>>,
}

fn assemble(
    spec: &SystemSpec,
    kind: MetricKind,
    pr: usize,
    lf: &[usize],
    cfg: &EvalConfig,
    terms: Terms,
    definition_holds: bool,
) -> FairnessReport {
    let measure = terms.contributions.iter().fold(0.0, |acc, c| acc + c.contribution);
    let count = terms.contributions.len();
    let (std_error, ci_low, ci_high, satisfied) = match (&cfg.method, terms.per_sample) {
        (Method::MonteCarlo { .. }, per_sample) => {
            let se = per_sample.map_or(0.0, |w| mean_and_std_error(&w).1);
            let (lo, hi) = (measure - Z_95 * se, measure + Z_95 * se);
            (Some(se), Some(lo), Some(hi), interval_verdict(lo, hi, cfg.tolerance))
        }
        (Method::Exact, _) => (None, None, None, measure.abs() <= cfg.tolerance),
    };
    FairnessReport {
        metric: kind,
        protected_attribute: pr,
        protected_name: spec.attribute_names[pr].clone(),
        legitimate_factors: lf.to_vec(),
        horizon: cfg.horizon,
        method: cfg.method,
        measure,
        std_error,
        ci_low,
        ci_high,
        pairs: terms.contributions,
        pair_count: count,
        satisfied,
        definition_holds,
        tolerance: cfg.tolerance,
        mean_contribution: measure / count.max(1) as f64,
    }
}

/// Verdict on one difference: exact |d| <= tol, or the interval rule.
fn term_holds(value: f64, std_error: Option<f64>, tolerance: f64) -> bool {
    match std_error {
        None => value.abs() <= tolerance,
        Some(se) => interval_verdict(value - Z_95 * se, value + Z_95 * se, tolerance),
    }
}

fn pairwise(spec: &SystemSpec, kind: MetricKind, pr: usize, lf: &[usize], cfg: &EvalConfig) -> Result<FairnessReport, MetricError> {
    check_config(cfg)?;
    let pairs = matched_pairs(spec, pr, lf)?;
    if pairs.is_empty() {
        let terms = Terms {
            contributions: Vec::new(),
            per_sample: None,
        };
        return Ok(assemble(spec, kind, pr, lf, cfg, terms, true));
    }
    let est = Estimates::compute(spec, cfg)?;
    let means = est.means();
    let mut contributions = Vec::with_capacity(pairs.len());
    for &(x, y) in &pairs {
        let std_error = est.draws().map(|d| {
            let diffs: Vec<f64> = (0..d.samples).map(|i| d.row(i)[x] - d.row(i)[y]).collect();
            mean_and_std_error(&diffs).1
        });
        contributions.push(Contribution {
            x,
            y,
            contribution: means[x] - means[y],
            std_error,
        });
    }
    let per_sample = est.draws().map(|d| {
        (0..d.samples)
            .map(|i| {
                let row = d.row(i);
                pairs.iter().fold(0.0, |acc, &(x, y)| acc + (row[x] - row[y]))
            })
            .collect()
    });
    let holds = contributions
        .iter()
        .all(|c| term_holds(c.contribution, c.std_error, cfg.tolerance));
    let terms = Terms {
        contributions,
        per_sample,
    };
    Ok(assemble(spec, kind, pr, lf, cfg, terms, holds))
}

/// Demographic parity measure for protected attribute `pr`.
pub fn dem_par(spec: &SystemSpec, pr: usize, cfg: &EvalConfig) -> Result<FairnessReport, MetricError> {
    pairwise(spec, MetricKind::DemPar, pr, &[], cfg)
}

/// Conditional statistical parity for `pr` given legitimate factors `lf`.
/// With `lf` empty the measure is the demographic parity measure.
pub fn cond_sp(spec: &SystemSpec, pr: usize, lf: &[usize], cfg: &EvalConfig) -> Result<FairnessReport, MetricError> {
    pairwise(spec, MetricKind::CondSp, pr, lf, cfg)
}

/// Counterfactual fairness measure: for each agent holding `pr`, its expected
/// reward in the system minus its expected reward in the counterfactual.
/// Monte Carlo estimates use the same seed in both systems.
pub fn count_fair(spec: &SystemSpec, pr: usize, cfg: &EvalConfig) -> Result<FairnessReport, MetricError> {
    check_config(cfg)?;
    let flipped = counterfactual_system(spec, pr)?;
    let factual = Estimates::compute(spec, cfg)?;
    let counter = Estimates::compute(&flipped, cfg)?;
    let (fm, cm) = (factual.means(), counter.means());
    let paired = factual.draws().zip(counter.draws());

    let gap_error = |x: usize| {
        paired.map(|(a, b)| {
            let diffs: Vec<f64> = (0..a.samples).map(|i| a.row(i)[x] - b.row(i)[x]).collect();
            mean_and_std_error(&diffs).1
        })
    };

    let holders: Vec<usize> = (0..spec.num_agents())
        .filter(|&x| spec.agents[x].attributes.holds(pr))
        .collect();
    let contributions: Vec<Contribution> = holders
        .iter()
        .map(|&x| Contribution {
            x,
            y: x,
            contribution: fm[x] - cm[x],
            std_error: gap_error(x),
        })
        .collect();
    let definition_holds = (0..spec.num_agents()).all(|x| term_holds(fm[x] - cm[x], gap_error(x), cfg.tolerance));
    let per_sample = paired.map(|(a, b)| {
        (0..a.samples)
            .map(|i| {
                let (ra, rb) = (a.row(i), b.row(i));
                holders.iter().fold(0.0, |acc, &x| acc + (ra[x] - rb[x]))
            })
            .collect()
    });
    let terms = Terms {
        contributions,
        per_sample,
    };
    Ok(assemble(spec, MetricKind::CountFair, pr, &[], cfg, terms, definition_holds))
}

/// Dispatches on `kind`; `lf` is ignored unless `kind` is [`MetricKind::CondSp`].
pub fn evaluate(
    spec: &SystemSpec,
    kind: MetricKind,
    pr: usize,
    lf: &[usize],
    cfg: &EvalConfig,
) -> Result<FairnessReport, MetricError> {
    match kind {
        MetricKind::DemPar => dem_par(spec, pr, cfg),
        MetricKind::CountFair => count_fair(spec, pr, cfg),
        MetricKind::CondSp => cond_sp(spec, pr, lf, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::fixtures::with_attributes;
    use crate::model::{AttributeAssignment, ProfileLiteral};

    #[test]
    fn matched_pairs_examples() {
        let spec = with_attributes(&[&[1, 0], &[0, 0]]);
        assert_eq!(matched_pairs(&spec, 0, &[]).unwrap(), vec![(0, 1)]);

        let spec = with_attributes(&[&[1, 1], &[0, 1], &[1, 0], &[0, 0]]);
        assert_eq!(matched_pairs(&spec, 0, &[1]).unwrap(), vec![(0, 1)]);
        assert_eq!(matched_pairs(&spec, 0, &[]).unwrap(), vec![(0, 1), (2, 3)]);

        let spec = with_attributes(&[&[1, 0], &[1, 0]]);
        assert_eq!(matched_pairs(&spec, 0, &[]).unwrap(), vec![]);
    }

    #[test]
    fn matched_pairs_rejects_bad_factors() {
        let spec = with_attributes(&[&[1, 0], &[0, 0]]);
        assert_eq!(matched_pairs(&spec, 0, &[0]).unwrap_err().code(), "LF_OVERLAPS_PROTECTED");
        assert_eq!(matched_pairs(&spec, 0, &[5]).unwrap_err().code(), "INDEX_OUT_OF_RANGE");
        assert_eq!(matched_pairs(&spec, 1, &[]).unwrap_err().code(), "NOT_PROTECTED");
    }

    #[test]
    fn twins_have_zero_dem_par() {
        let spec = fixtures::symmetric_twins();
        let r = dem_par(&spec, 0, &EvalConfig::exact(4)).unwrap();
        assert_eq!(r.measure, 0.0);
        assert!(r.satisfied && r.definition_holds);
        assert_eq!(r.pairs.len(), 1);
        r.check_invariants().unwrap();
    }

    #[test]
    fn zero_rewards_give_zero_measures() {
        let mut spec = fixtures::symmetric_twins();
        for a in &mut spec.agents {
            a.rewards = Default::default();
        }
        let cfg = EvalConfig::exact(3);
        assert_eq!(dem_par(&spec, 0, &cfg).unwrap().measure, 0.0);
        assert_eq!(count_fair(&spec, 0, &cfg).unwrap().measure, 0.0);
    }

    #[test]
    fn dem_par_sign_follows_protected_side() {
        let mut spec = fixtures::symmetric_twins();
        spec.agents[1].rewards = spec.agents[1].rewards.scaled(2.0);
        let r = dem_par(&spec, 0, &EvalConfig::exact(3)).unwrap();
        let ex = expected_rewards(&spec, &EvalConfig::exact(3)).unwrap();
        assert_eq!(r.measure, ex[0] - ex[1]);
        assert!(r.measure != 0.0);
        assert!(!r.satisfied);
        r.check_invariants().unwrap();
    }

    #[test]
    fn cond_sp_with_empty_factors_equals_dem_par() {
        let spec = fixtures::two_agent_half_policies(0.3);
        let cfg = EvalConfig::exact(3);
        let a = dem_par(&spec, 0, &cfg).unwrap();
        let b = cond_sp(&spec, 0, &[], &cfg).unwrap();
        assert_eq!(a.measure.to_bits(), b.measure.to_bits());
        assert_eq!(a.pairs, b.pairs);
    }

    #[test]
    fn cond_sp_without_qualifying_agents_is_vacuous() {
        let spec = fixtures::two_agent_half_policies(0.3);
        let r = cond_sp(&spec, 0, &[1], &EvalConfig::exact(2)).unwrap();
        assert_eq!(r.measure, 0.0);
        assert!(r.pairs.is_empty() && r.satisfied);
    }

    #[test]
    fn counterfactual_flips_only_the_protected_column() {
        let spec = with_attributes(&[&[1, 1], &[0, 0], &[1, 0]]);
        let cf = counterfactual_system(&spec, 0).unwrap();
        let bits: Vec<Vec<u8>> = cf.agents.iter().map(|a| a.attributes.bits().to_vec()).collect();
        assert_eq!(bits, vec![vec![0, 1], vec![1, 0], vec![0, 0]]);
        assert_eq!(counterfactual_system(&cf, 0).unwrap(), spec);
        assert_eq!(cf.transition, spec.transition);
    }

    #[test]
    fn count_fair_is_zero_without_attribute_sensitivity() {
        let spec = fixtures::symmetric_twins();
        let r = count_fair(&spec, 0, &EvalConfig::exact(4)).unwrap();
        assert_eq!(r.measure, 0.0);
        assert!(r.definition_holds);
        assert_eq!(r.pairs.len(), 1);
        assert_eq!((r.pairs[0].x, r.pairs[0].y), (0, 0));
    }

    #[test]
    fn count_fair_without_holders_is_empty() {
        let mut spec = fixtures::symmetric_twins();
        spec.agents[0].attributes = AttributeAssignment::new(vec![0, 0]);
        let r = count_fair(&spec, 0, &EvalConfig::exact(2)).unwrap();
        assert_eq!(r.measure, 0.0);
        assert!(r.pairs.is_empty());
    }

    /// Coin system whose success probability depends on agent 0's protected bit.
    fn sensitive_coin() -> SystemSpec {
        let mut spec = fixtures::coin(0.7);
        spec.transition.attribute_sensitive = true;
        let mut low = spec.transition.entries[0].clone();
        spec.transition.entries[0].condition = vec![ProfileLiteral {
            agent: 0,
            attribute: 0,
            value: 1,
        }];
        low.condition = vec![ProfileLiteral {
            agent: 0,
            attribute: 0,
            value: 0,
        }];
        low.next = vec![(crate::StateId(0), 0.6), (crate::StateId(1), 0.4)];
        spec.transition.entries.push(low);
        spec
    }

    #[test]
    fn count_fair_sees_attribute_sensitive_dynamics() {
        let spec = sensitive_coin();
        let r = count_fair(&spec, 0, &EvalConfig::exact(1)).unwrap();
        assert!((r.measure - (0.7 - 0.4)).abs() < 1e-15, "{}", r.measure);
        assert!(!r.satisfied && !r.definition_holds);
        r.check_invariants().unwrap();
    }

    #[test]
    fn monte_carlo_count_fair_uses_common_streams() {
        let spec = sensitive_coin();
        let r = count_fair(&spec, 0, &EvalConfig::monte_carlo(1, 20_000, 3)).unwrap();
        let se = r.std_error.unwrap();
        assert!(se > 0.0);
        assert!((r.measure - 0.3).abs() <= 4.0 * se, "{} +- {}", r.measure, se);
        assert!(!r.satisfied);
        r.check_invariants().unwrap();
    }

    #[test]
    fn monte_carlo_twins_are_satisfied() {
        let spec = fixtures::symmetric_twins();
        let r = dem_par(&spec, 0, &EvalConfig::monte_carlo(3, 5_000, 9)).unwrap();
        // Twins sampled from independent policy draws do not cancel exactly.
        assert!(r.satisfied, "{r:?}");
        r.check_invariants().unwrap();
    }

    #[test]
    fn negative_tolerance_is_rejected() {
        let spec = fixtures::symmetric_twins();
        let cfg = EvalConfig::exact(2).with_tolerance(-1.0);
        assert_eq!(dem_par(&spec, 0, &cfg).unwrap_err().code(), "INVALID_ARGUMENT");
    }

    #[test]
    fn interval_rule() {
        assert!(interval_verdict(-0.1, 0.2, 0.0));
        assert!(!interval_verdict(0.1, 0.2, 0.05));
        assert!(interval_verdict(0.1, 0.2, 0.1));
        assert!(interval_verdict(-0.2, -0.01, 0.05));
    }
}
