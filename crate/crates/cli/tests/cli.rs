use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cogrowth"))
        .args(args)
        .env_remove("COGROWTH_MAX_STATES")
        .output()
        .unwrap()
}

fn json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    let raw: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&raw).unwrap()
}

fn assert_valid(validator: &jsonschema::Validator, doc: &Value) {
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}\n{doc:#}");
}

#[test]
fn free_exponent_for_uniform_lengths() {
    let v = json(&["delta", "--rank", "3"]);
    let expected = 5f64.ln() / 6f64.ln();
    assert!((v["delta"].as_f64().unwrap() - expected).abs() < 1e-12);
    assert_valid(&schema("exponent_result.schema.json"), &v["result"]);
}

#[test]
fn rationals_are_accepted_and_renormalized() {
    let a = json(&["delta", "--r", "1/4,1/4"]);
    let b = json(&["delta", "--r", "3,3"]);
    assert_eq!(a["delta"], b["delta"]);
    let out = run(&["delta", "--r", "3,3"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("renormalized"));
}

#[test]
fn subgroup_outputs_match_schemas() {
    let sub = r#"{"generators":["aa","bb"]}"#;
    assert_valid(&schema("subgroup.schema.json"), &serde_json::from_str(sub).unwrap());
    let v = json(&["delta", "--subgroup", sub, "--bruteforce", "16"]);
    let exp = schema("exponent_result.schema.json");
    assert_valid(&exp, &v["result"]);
    assert_valid(&exp, &v["bruteforce"]);

    let f = json(&["fold", "--generators", "a,bb,baB"]);
    assert_eq!(f["index"], 2);
    assert_valid(&schema("core_graph.schema.json"), &f["core"]);

    let l = json(&["lambda0", "--p", "p-star", "--r", "0.3,0.2", "--s", "0.3"]);
    assert_eq!(l["agree"], true);
    let est = schema("spectral_estimate.schema.json");
    for e in l["estimates"].as_array().unwrap() {
        assert_valid(&est, e);
    }

    let w = json(&["walk", "--subgroup", r#"{"generators":["a"]}"#, "--trials", "20000", "--seed", "5"]);
    assert_valid(&est, &w["estimate"]);
}

#[test]
fn verify_is_deterministic_and_valid() {
    let args = ["verify", "--suite", "builtin", "--depths", "6,12", "--tol", "0.05", "--seed", "11"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["seed"], 11);
    let report = schema("cogrowth_report.schema.json");
    let est = schema("spectral_estimate.schema.json");
    for r in v["reports"].as_array().unwrap() {
        assert_valid(&report, r);
        assert_valid(&est, &r["numericLambda"]);
    }
}

#[test]
fn walk_output_is_byte_identical() {
    let args = ["walk", "--trials", "50000", "--steps", "16", "--seed", "3", "--format", "csv"];
    let a = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, run(&args).stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("steps,returns,probability"));
    assert_eq!(text.lines().count(), 9);
}

#[test]
fn missing_seed_is_synthesized_and_reported() {
    let out = run(&["walk", "--trials", "1000", "--steps", "4"]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let printed: u64 = stderr.lines().find_map(|l| l.strip_prefix("seed: ")).unwrap().parse().unwrap();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], printed);
}

#[test]
fn output_file_matches_stdout() {
    let path = std::env::temp_dir().join(format!("cogrowth-out-{}.json", std::process::id()));
    let args = ["fold", "--generators", "a,baB"];
    let out = run(&[&args[..], &["--output", path.to_str().unwrap()]].concat());
    assert!(out.status.success() && out.stdout.is_empty());
    assert_eq!(std::fs::read(&path).unwrap(), run(&args).stdout);
    std::fs::remove_file(path).unwrap();
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["delta", "--r", "0.3,x"]).status.code(), Some(2));
    assert_eq!(run(&["delta", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["delta", "--subgroup", "/nonexistent/subgroup.json"]).status.code(), Some(2));
    assert_eq!(run(&["delta", "--subgroup", r#"{"generators":["a"],"extra":1}"#]).status.code(), Some(2));
    assert_eq!(run(&["delta", "--rank", "3", "--r", "0.3,0.2"]).status.code(), Some(2));

    let capped = Command::new(env!("CARGO_BIN_EXE_cogrowth"))
        .args(["verify", "--suite", "builtin", "--seed", "1"])
        .env("COGROWTH_MAX_STATES", "10")
        .output()
        .unwrap();
    assert_eq!(capped.status.code(), Some(3));

    // Too-tight tolerance: the report is still written, then exit 1.
    let tight = run(&["verify", "--subgroup", r#"{"generators":["a"]}"#, "--depths", "4,8", "--tol", "1e-9", "--seed", "1"]);
    assert_eq!(tight.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&tight.stdout).unwrap();
    assert_eq!(v["pass"], false);
}
