use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fairmas_core::fixtures;
use fairmas_core::scenario::save_system;
use serde_json::Value;
use tempfile::TempDir;

fn fairmas(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairmas"))
        .current_dir(dir)
        .args(args)
        .env_remove("FAIRMAS_ENUM_CAP")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn traffic_dir() -> TempDir {
    let dir = TempDir::new().unwrap();
    let out = fairmas(dir.path(), &["gen", "--family", "traffic", "--out", "traffic.fairmas.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir
}

fn write_fixture(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

#[test]
fn validate_accepts_a_generated_file() {
    let dir = traffic_dir();
    let out = fairmas(dir.path(), &["validate", "traffic.fairmas.json"]);
    assert_eq!(code(&out), 0);
    let doc = stdout_json(&out);
    assert_eq!(doc["payload"]["violations"], Value::Array(vec![]));
    assert_eq!(doc["input_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn validate_reports_parse_position() {
    let dir = TempDir::new().unwrap();
    write_fixture(dir.path(), "bad.fairmas.json", "{\n  \"schema_version\": \"1\",\n  \"num_states\": ]\n}");
    let out = fairmas(dir.path(), &["validate", "bad.fairmas.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn validate_lists_policy_violation() {
    let dir = TempDir::new().unwrap();
    let mut doc: Value = serde_json::from_str(&save_system(&fixtures::coin_actions())).unwrap();
    doc["agents"][0]["policy"][0] = serde_json::json!([0.5, 0.6]);
    write_fixture(dir.path(), "p.fairmas.json", &doc.to_string());
    let out = fairmas(dir.path(), &["validate", "p.fairmas.json"]);
    assert_eq!(code(&out), 1);
    let report = stdout_json(&out);
    let codes: Vec<&str> = report["payload"]["violations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["code"].as_str().unwrap())
        .collect();
    assert!(codes.contains(&"POLICY_NOT_NORMALIZED"), "{codes:?}");
}

#[test]
fn unknown_keys_need_lenient() {
    let dir = TempDir::new().unwrap();
    let mut doc: Value = serde_json::from_str(&save_system(&fixtures::coin(0.5))).unwrap();
    doc["colour"] = Value::String("teal".into());
    write_fixture(dir.path(), "k.fairmas.json", &doc.to_string());
    let strict = fairmas(dir.path(), &["validate", "k.fairmas.json"]);
    assert_eq!(code(&strict), 2);
    assert!(stderr(&strict).contains("UNKNOWN_KEY"));
    let lenient = fairmas(dir.path(), &["--lenient", "validate", "k.fairmas.json"]);
    assert_eq!(code(&lenient), 0, "{}", stderr(&lenient));
}

#[test]
fn symmetric_twins_are_fair() {
    let dir = TempDir::new().unwrap();
    write_fixture(dir.path(), "twins.fairmas.json", &save_system(&fixtures::symmetric_twins()));
    let out = fairmas(
        dir.path(),
        &["metric", "twins.fairmas.json", "--metric", "dempar", "--protected", "protected", "--horizon", "5"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(stdout_json(&out)["payload"]["measure"], serde_json::json!(0.0));
}

#[test]
fn default_traffic_report_matches_golden() {
    let dir = traffic_dir();
    let out = fairmas(
        dir.path(),
        &[
            "metric",
            "traffic.fairmas.json",
            "--metric",
            "dempar",
            "--protected",
            "human_driven",
            "--horizon",
            "6",
            "--method",
            "exact",
        ],
    );
    assert_eq!(code(&out), 3, "unfair systems exit 3");
    let golden = include_str!("golden/traffic_dempar_h6.json");
    assert_eq!(String::from_utf8(out.stdout.clone()).unwrap(), golden);
    let measure = stdout_json(&out)["payload"]["measure"].as_f64().unwrap();
    assert!((measure - -3.88712007351).abs() <= 1e-9);
}

#[test]
fn legit_factor_overlapping_protected_is_rejected() {
    let dir = traffic_dir();
    let out = fairmas(
        dir.path(),
        &[
            "metric",
            "traffic.fairmas.json",
            "--metric",
            "condsp",
            "--protected",
            "human_driven",
            "--legit-factors",
            "human_driven",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("LF_OVERLAPS_PROTECTED"), "{}", stderr(&out));
}

#[test]
fn inconsistent_flags_exit_one() {
    let dir = traffic_dir();
    let cases: [&[&str]; 4] = [
        &["metric", "traffic.fairmas.json", "--legit-factors", "high_speed"],
        &["metric", "traffic.fairmas.json", "--samples", "100"],
        &["metric", "traffic.fairmas.json", "--method", "bogus"],
        &["metric", "traffic.fairmas.json", "--protected", "colour"],
    ];
    for args in cases {
        let out = fairmas(dir.path(), args);
        assert_eq!(code(&out), 1, "{args:?}: {}", stderr(&out));
    }
    assert_eq!(code(&fairmas(dir.path(), &["--help"])), 0);
}

#[test]
fn counterfactual_twice_is_byte_identical() {
    let dir = traffic_dir();
    let p = dir.path();
    for (input, output) in [("traffic.fairmas.json", "cf.fairmas.json"), ("cf.fairmas.json", "cf2.fairmas.json")] {
        let out = fairmas(p, &["counterfactual", input, "--protected", "human_driven", "--out", output]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let original = fs::read(p.join("traffic.fairmas.json")).unwrap();
    assert_eq!(fs::read(p.join("cf2.fairmas.json")).unwrap(), original);

    let once: Value = serde_json::from_slice(&fs::read(p.join("cf.fairmas.json")).unwrap()).unwrap();
    let orig: Value = serde_json::from_slice(&original).unwrap();
    for agent in 0..2 {
        let a = orig["agents"][agent]["attributes"][0].as_u64().unwrap();
        let b = once["agents"][agent]["attributes"][0].as_u64().unwrap();
        assert_eq!(a + b, 1);
        assert_eq!(orig["agents"][agent]["attributes"][1], once["agents"][agent]["attributes"][1]);
    }
}

#[test]
fn counterfactual_unknown_attribute_exits_one() {
    let dir = traffic_dir();
    let out = fairmas(dir.path(), &["counterfactual", "traffic.fairmas.json", "--protected", "colour"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("UNKNOWN_ATTRIBUTE"));
}

#[test]
fn enumerate_deterministic_chain() {
    let dir = TempDir::new().unwrap();
    write_fixture(dir.path(), "chain.fairmas.json", &save_system(&fixtures::deterministic_chain(1.0)));
    let out = fairmas(dir.path(), &["enumerate", "chain.fairmas.json", "--horizon", "5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let payload = &stdout_json(&out)["payload"];
    assert_eq!(payload["runs"], 1);
    assert_eq!(payload["probability_mass"], serde_json::json!(1.0));
    assert_eq!(payload["expected_rewards"][0], serde_json::json!(5.0));
}

#[test]
fn enumeration_cap_exits_four() {
    let dir = traffic_dir();
    let out = Command::new(env!("CARGO_BIN_EXE_fairmas"))
        .current_dir(dir.path())
        .args(["enumerate", "traffic.fairmas.json", "--horizon", "3"])
        .env("FAIRMAS_ENUM_CAP", "10")
        .output()
        .unwrap();
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("ENUMERATION_CAP_EXCEEDED"));
}

#[test]
fn optimize_prefers_dedicated_lane() {
    let dir = TempDir::new().unwrap();
    let out = fairmas(
        dir.path(),
        &["optimize", "--family", "traffic", "--params", "dedicated_lane", "--algorithm", "grid", "--horizon", "6"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let payload = &stdout_json(&out)["payload"];
    assert_eq!(payload["best_config"], serde_json::json!([true]));
    assert_eq!(payload["trace"].as_array().unwrap().len(), 2);
}

#[test]
fn optimize_over_start_state() {
    let dir = TempDir::new().unwrap();
    write_fixture(dir.path(), "gap.fairmas.json", &save_system(&fixtures::parity_gap(0.8)));
    let out = fairmas(dir.path(), &["optimize", "gap.fairmas.json", "--horizon", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let payload = &stdout_json(&out)["payload"];
    // from the absorbing state nobody earns anything
    assert_eq!(payload["best_config"], serde_json::json!([1]));
    assert_eq!(payload["best_value"], serde_json::json!(0.0));
}

#[test]
fn monte_carlo_reports_are_independent_of_thread_count() {
    let dir = traffic_dir();
    let run = |threads: &str| {
        let out = fairmas(
            dir.path(),
            &[
                "--threads",
                threads,
                "metric",
                "traffic.fairmas.json",
                "--metric",
                "countfair",
                "--horizon",
                "6",
                "--method",
                "mc",
                "--samples",
                "20000",
                "--seed",
                "7",
            ],
        );
        assert!(matches!(code(&out), 0 | 3), "{}", stderr(&out));
        let doc = stdout_json(&out);
        assert!(!doc["command"].to_string().contains("threads"));
        out.stdout
    };
    let one = run("1");
    assert_eq!(one, run("4"));
    assert_eq!(one, run("1"));
}

#[test]
fn describe_summarizes() {
    let dir = traffic_dir();
    let out = fairmas(dir.path(), &["describe", "traffic.fairmas.json", "--horizon", "2"]);
    assert_eq!(code(&out), 0);
    let payload = &stdout_json(&out)["payload"];
    assert_eq!(payload["states"], 16);
    assert_eq!(payload["protected"], serde_json::json!(["human_driven"]));
}
