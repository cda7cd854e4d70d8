mod common;

use common::{brute_force, random_systems, relative_error, traffic_golden, CarChain};
use fairmas_core::fixtures::{self, RandomLimits};
use fairmas_core::metrics::{count_fair, dem_par, EvalConfig};
use fairmas_core::scenario::{build_traffic, TrafficParams, HUMAN_DRIVEN};
use fairmas_core::{Dynamics, DEFAULT_ENUM_CAP};

#[test]
fn exact_reward_matches_brute_force_on_random_systems() {
    for sensitive in [false, true] {
        let limits = RandomLimits {
            attribute_sensitive: sensitive,
            ..RandomLimits::default()
        };
        for spec in random_systems(101, 40, limits) {
            let dynamics = Dynamics::new(&spec).unwrap();
            for h in 1..=4 {
                let exact = dynamics.expected_rewards_exact(h, DEFAULT_ENUM_CAP).unwrap();
                for (agent, &value) in exact.iter().enumerate() {
                    let oracle = brute_force(&spec, agent, spec.start.0, h);
                    assert!(relative_error(value, oracle) <= 1e-12, "h={h} agent={agent}: {value} vs {oracle}");
                }
            }
        }
    }
}

#[test]
fn exact_reward_matches_brute_force_on_fixtures() {
    for spec in [
        fixtures::coin(0.7),
        fixtures::coin_actions(),
        fixtures::two_agent_half_policies(0.3),
        fixtures::all_pairs_reward_one(),
        fixtures::signed_rewards(),
        fixtures::symmetric_twins(),
    ] {
        let dynamics = Dynamics::new(&spec).unwrap();
        for h in 1..=6 {
            let exact = dynamics.expected_rewards_exact(h, DEFAULT_ENUM_CAP).unwrap();
            for (agent, &value) in exact.iter().enumerate() {
                let oracle = brute_force(&spec, agent, 0, h);
                assert!(relative_error(value, oracle) <= 1e-12, "{value} vs {oracle}");
            }
        }
    }
}

fn chain(params: &TrafficParams, fast_prob: f64, fast_gain: f64) -> CarChain {
    CarChain {
        length: params.corridor_length,
        advance: fast_prob * fast_gain + (1.0 - fast_prob) * params.slow_route_gain,
        arrival: params.arrival_reward,
        step: params.step_cost,
    }
}

#[test]
fn golden_values_agree_with_independent_car_chains() {
    let golden = traffic_golden();
    let h = golden.horizon;
    let p = TrafficParams::default();
    let human = chain(&p, p.human_fast_prob, p.human_gain).expected(h);
    let ai = chain(&p, p.ai_fast_prob, p.fast_route_gain).expected(h);
    let ai_lane = chain(&p, p.ai_fast_prob, p.slow_route_gain).expected(h);
    // the human car in the counterfactual keeps its policy but drives as AI
    let human_as_ai = chain(&p, p.human_fast_prob, p.fast_route_gain).expected(h);
    let human_as_ai_lane = chain(&p, p.human_fast_prob, p.slow_route_gain).expected(h);

    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    assert!(close(human, golden.baseline.expected_rewards[0]));
    assert!(close(ai, golden.baseline.expected_rewards[1]));
    assert!(close(human - ai, golden.baseline.dem_par));
    assert!(close(human - human_as_ai, golden.baseline.count_fair));
    assert!(close(human - ai_lane, golden.dedicated_lane.dem_par));
    assert!(close(human - human_as_ai_lane, golden.dedicated_lane.count_fair));
}

#[test]
fn traffic_engine_matches_golden_values() {
    let golden = traffic_golden();
    let cfg = EvalConfig::exact(golden.horizon);
    for (lane, case) in [(false, &golden.baseline), (true, &golden.dedicated_lane)] {
        let spec = build_traffic(&TrafficParams {
            dedicated_lane: lane,
            ..TrafficParams::default()
        })
        .unwrap();
        let dp = dem_par(&spec, HUMAN_DRIVEN, &cfg).unwrap();
        let cf = count_fair(&spec, HUMAN_DRIVEN, &cfg).unwrap();
        assert!((dp.measure - case.dem_par).abs() <= 1e-9, "{}", dp.measure);
        assert!((cf.measure - case.count_fair).abs() <= 1e-9, "{}", cf.measure);
    }
}

#[test]
fn small_traffic_instances_match_brute_force() {
    for lane in [false, true] {
        let params = TrafficParams {
            corridor_length: 2,
            dedicated_lane: lane,
            cars: vec!["human".parse().unwrap(), "ai:low".parse().unwrap(), "human:low".parse().unwrap()],
            ..TrafficParams::default()
        };
        let spec = build_traffic(&params).unwrap();
        let exact = Dynamics::new(&spec).unwrap().expected_rewards_exact(3, DEFAULT_ENUM_CAP).unwrap();
        for (agent, &value) in exact.iter().enumerate() {
            let oracle = brute_force(&spec, agent, spec.start.0, 3);
            assert!(relative_error(value, oracle) <= 1e-12, "{value} vs {oracle}");
        }
    }
}
