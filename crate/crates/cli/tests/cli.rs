use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rwde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rwde"))
        .args(args)
        .env_remove("RWDE_THREADS")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not json ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn assert_schema(name: &str, value: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../schema")
        .join(format!("{name}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator
        .iter_errors(value)
        .map(|e| e.to_string())
        .collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

#[test]
fn analyze_nearest_neighbour() {
    let out = rwde(&["analyze", "--alphas", "-1:1,1:2"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_schema("analyze", &v);
    assert_eq!(v["kappa1"], 1.0);
    assert_eq!(v["kappa0"]["value"], 3.0);
    assert_eq!(v["regime"], "TransientRight");
    assert_eq!(v["ballistic"], false);
}

#[test]
fn analyze_trap_weights_and_recurrence() {
    let out = rwde(&[
        "analyze",
        "--alphas",
        "-16:0.0149254,2:0.2238806,5:0.0746269",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_schema("analyze", &v);
    assert!((v["kappa0"]["value"].as_f64().unwrap() - 1.0).abs() < 1e-5);
    assert_eq!(v["ballistic"], false);
    assert_eq!(v["m0"], 18);

    let v = json(&rwde(&["analyze", "--alphas", "-1:1,1:1"]));
    assert_eq!(v["regime"], "Recurrent");
}

#[test]
fn kappa0_unit_weights() {
    let out = rwde(&["kappa0", "--alphas", "-6:1,2:1,3:1", "--max-diameter", "12"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_schema("kappa0", &v);
    assert_eq!(v["value"], 6.0);
    assert_eq!(v["witness"]["offsets"], serde_json::json!([0, 3, 6]));
    assert_eq!(v["certified"], false);

    let strict = rwde(&[
        "kappa0",
        "--alphas",
        "-6:1,2:1,3:1",
        "--max-diameter",
        "12",
        "--require-certified",
    ]);
    assert_eq!(strict.status.code(), Some(3));
    let certified = rwde(&["kappa0", "--alphas", "-6:1,2:1,3:1", "--require-certified"]);
    assert_eq!(certified.status.code(), Some(0));
    assert_eq!(json(&certified)["certified"], true);
}

#[test]
fn exhaustive_strategy_flag() {
    let out = rwde(&[
        "kappa0",
        "--alphas",
        "-2:1,-1:0.5,1:0.5,2:1",
        "--strategy",
        "exhaustive",
        "--max-diameter",
        "8",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["strategy"], "exhaustive");
}

#[test]
fn validation_errors_exit_one() {
    for args in [
        &["analyze", "--alphas", "-1:1,1:-2"][..],
        &["analyze", "--alphas", "garbage"],
        &["analyze"],
        &["kappa0", "--alphas", "-1:1,1:2", "--strategy", "guess"],
        &["verify", "nonsense"],
        &["analyze", "--alphas", "-1:1,1:2", "--format", "csv"],
    ] {
        let out = rwde(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert_schema("error", &json(&out));
    }
    assert_eq!(rwde(&["analyze", "--bogus"]).status.code(), Some(1));
}

#[test]
fn verify_beta_law_passes() {
    let out = rwde(&[
        "verify",
        "beta-law",
        "--alphas",
        "-1:1,1:2",
        "--replicas",
        "2000",
        "--window",
        "512",
        "--seed",
        "7",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_schema("verify", &v);
    assert_eq!(v["passed"], true);
    assert!(v["evidence"]["ks"]["p_value"].as_f64().unwrap() > 0.001);
}

#[test]
fn verify_failure_exits_two() {
    // a tiny window cannot pin the escape probability down
    let out = rwde(&[
        "verify",
        "beta-law",
        "--replicas",
        "200",
        "--window",
        "4",
        "--seed",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let v = json(&out);
    assert_schema("verify", &v);
    assert_eq!(v["passed"], false);
}

#[test]
fn verify_small_suites() {
    for (suite, replicas) in [
        ("derrw", "50000"),
        ("harmonic", "200"),
        ("loop-reversal", "50000"),
    ] {
        let out = rwde(&["verify", suite, "--replicas", replicas, "--seed", "3"]);
        assert_eq!(out.status.code(), Some(0), "{suite}");
        assert_schema("verify", &json(&out));
    }
}

#[test]
fn simulate_writes_csv_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = rwde(&[
            "simulate",
            "--alphas",
            "-2:0.5,1:1,3:0.7",
            "--steps",
            "500",
            "--seed",
            "11",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,x"));
    assert_eq!(lines.next(), Some("0,0"));
    assert_eq!(text.lines().count(), 502);
}

#[test]
fn simulate_json_stats() {
    let out = rwde(&[
        "simulate", "--alphas", "-1:1,1:3", "--steps", "200", "--format", "json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_schema("simulate", &json(&out));
}

#[test]
fn speed_matches_nearest_neighbour_formula() {
    let args = [
        "speed",
        "--alphas",
        "-1:1,1:3",
        "--steps",
        "100000",
        "--replicas",
        "200",
        "--seed",
        "1",
    ];
    let out = rwde(&args);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_schema("speed", &v);
    assert!((v["v_hat"].as_f64().unwrap() - 1.0 / 3.0).abs() < 0.02);

    // byte-identical across reruns and thread counts
    let mut single = args.to_vec();
    single.extend(["--threads", "1"]);
    assert_eq!(rwde(&single).stdout, out.stdout);
}

#[test]
fn speed_regeneration_method() {
    let out = rwde(&[
        "speed",
        "--alphas",
        "-1:1,1:3",
        "--steps",
        "20000",
        "--replicas",
        "50",
        "--method",
        "regeneration",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_schema("speed", &v);
    assert_eq!(v["method"], "regeneration");
}
