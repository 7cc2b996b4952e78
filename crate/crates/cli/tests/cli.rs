use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn model(name: &str) -> String {
    root().join("models").join(name).to_string_lossy().into_owned()
}

fn lpsnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpsnet")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json_ok(args: &[&str]) -> Value {
    let out = lpsnet(args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn assert_schema(name: &str, doc: &Value) {
    let text = std::fs::read_to_string(root().join("schemas").join(name)).unwrap();
    let schema: Value = serde_json::from_str(&text).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> =
        validator.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{name}: {errors:#?}");
}

fn temp_file(name: &str, body: &str) -> String {
    let dir = std::env::temp_dir().join(format!("lpsnet-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn analyze_row1() {
    let doc = json_ok(&["analyze", &model("tandem_hyperexp.toml")]);
    assert_schema("analyze.schema.json", &doc);
    assert_eq!(doc["status"], "stable");
    assert!((doc["EV"].as_f64().unwrap() - 10.24).abs() <= 0.01);
    assert!((doc["p_d"].as_f64().unwrap() - 0.7f64.powi(9)).abs() < 1e-12);
}

#[test]
fn analyze_raw_form() {
    let doc = json_ok(&["analyze", &model("tandem_hyperexp.toml"), "--raw"]);
    assert_schema("analyze.schema.json", &doc);
    assert_eq!(doc["form"], "raw");
    assert_eq!(doc["EV"], doc["heavy_traffic"]["ev_raw"]);
}

#[test]
fn analyze_mm1() {
    let doc = json_ok(&["analyze", &model("mm1.toml")]);
    assert!((doc["EV"].as_f64().unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn analyze_scenario() {
    let doc = json_ok(&["analyze", &model("tandem_hyperexp.toml"), "--scenario", "heavy"]);
    assert!((doc["derived"]["rho"].as_f64().unwrap() - 0.95).abs() < 1e-12);
    let out = lpsnet(&["analyze", &model("tandem_hyperexp.toml"), "--scenario", "missing"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn analyze_tie_warns() {
    let doc = json_ok(&["analyze", &model("tandem_tie.toml")]);
    assert_schema("analyze.schema.json", &doc);
    assert_eq!(doc["derived"]["bottleneck_tie"], true);
    assert!(doc["warnings"].as_array().unwrap().iter().any(|w| w.as_str().unwrap().contains("not unique")));
}

#[test]
fn analyze_unstable_marker() {
    let text =
        "[[node]]\narrival_rate = 1.5\nservers = 2\nservice = { kind = \"exponential\", mean = 1.0 }\n";
    let doc = json_ok(&["analyze", &temp_file("unstable.toml", text)]);
    assert_schema("analyze.schema.json", &doc);
    assert_eq!(doc["status"], "unstable");
    assert!(doc["EV"].is_null());
    assert!(doc["heavy_traffic"].is_null());
}

#[test]
fn parse_error_has_line_and_code_2() {
    let text = "[[node]]\narrival_rate = 0.5\nservers = 1\nthreads = 4\nservice = { kind = \"exponential\", mean = 1.0 }\n";
    let out = lpsnet(&["analyze", &temp_file("bad.toml", text)]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn model_errors_exit_2() {
    let routing = "routing = [[1.2]]\n[[node]]\narrival_rate = 0.5\nservers = 1\nservice = { kind = \"exponential\", mean = 1.0 }\n";
    assert_eq!(code(&lpsnet(&["analyze", &temp_file("routing.toml", routing)])), 2);
    assert_eq!(code(&lpsnet(&["analyze", "/nonexistent/model.toml"])), 2);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&lpsnet(&[])), 1);
    assert_eq!(code(&lpsnet(&["frobnicate"])), 1);
    assert_eq!(code(&lpsnet(&["simulate", &model("mm1.toml"), "--reps", "many"])), 1);
    assert_eq!(code(&lpsnet(&["simulate", &model("mm1.toml"), "--reps", "0"])), 1);
    assert_eq!(code(&lpsnet(&["estimate", &model("mm1.toml"), "--method", "oracle"])), 1);
    assert_eq!(code(&lpsnet(&["validate", "--rows", "17", "--no-sim"])), 1);
    assert_eq!(code(&lpsnet(&["fluid", &model("mm1.toml"), "--x0", "1,2"])), 1);
}

#[test]
fn help_exits_0() {
    assert_eq!(code(&lpsnet(&["--help"])), 0);
    assert_eq!(code(&lpsnet(&["simulate", "--help"])), 0);
}

#[test]
fn numeric_failure_exits_3() {
    let out = lpsnet(&["estimate", &model("tandem_hyperexp.toml"), "--method", "ctmc"]);
    assert_eq!(code(&out), 2, "hyper-exponential is refused by the oracle");
    let out = lpsnet(&["estimate", &model("tandem_tie.toml"), "--method", "ctmc", "--truncation", "5000"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

fn csv(args: &[&str]) -> Vec<Vec<f64>> {
    let out = lpsnet(args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("t,x_1,"));
    assert!(header.ends_with(",workload,lyapunov,dist_manifold"));
    lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn fluid_on_manifold_stays_put() {
    // Exponential tandem at critical load: τ = (3, 2), bottleneck node 0 with
    // critical point (2, 4) and w* = 14.
    let rows = csv(&["fluid", &model("tandem_tie.toml"), "--critical", "--x0", "2,4", "--horizon", "100"]);
    for r in &rows {
        assert!((r[1] - 2.0).abs() < 1e-8 && (r[2] - 4.0).abs() < 1e-8, "{r:?}");
        assert!(r[5] < 1e-8);
    }
}

#[test]
fn fluid_converges_and_conserves_workload() {
    let rows =
        csv(&["fluid", &model("tandem_hyperexp.toml"), "--critical", "--x0", "8,1", "--horizon", "400"]);
    let w0 = rows[0][3];
    for r in &rows {
        assert!((r[3] - w0).abs() <= 1e-6 * w0);
    }
    assert!(rows.last().unwrap()[5] < 1e-4, "{:?}", rows.last());
}

#[test]
fn fluid_empty_network_stays_empty() {
    let text = "routing = [[0.0, 1.0], [0.0, 0.0]]\n\
        [[node]]\narrival_rate = 0.0\nservers = 1\nservice = { kind = \"exponential\", mean = 1.0 }\n\
        [[node]]\narrival_rate = 0.0\nservers = 1\nservice = { kind = \"exponential\", mean = 1.0 }\n";
    // No external traffic is a model error.
    assert_eq!(code(&lpsnet(&["fluid", &temp_file("empty.toml", text)])), 2);
    let rows = csv(&["fluid", &model("mm1.toml"), "--horizon", "1", "--x0", "0"]);
    assert_eq!(rows[0][1], 0.0);
}

#[test]
fn simulate_schema_determinism_and_trace() {
    let trace = std::env::temp_dir().join(format!("lpsnet-trace-{}.csv", std::process::id()));
    let args = ["simulate", &model("three_node.toml"), "--seed", "7", "--reps", "3", "--jobs", "5000"];
    let a = lpsnet(&args);
    let b = lpsnet(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let doc: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_schema("simulate.schema.json", &doc);
    assert_eq!(doc["seed"], 7);

    let mut with_trace = args.to_vec();
    let t = trace.to_string_lossy().into_owned();
    with_trace.extend(["--trace", t.as_str()]);
    let c = lpsnet(&with_trace);
    assert_eq!(c.stdout, a.stdout, "tracing must not change the estimates");
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("job_id,entry,exit,path"));
    assert_eq!(lines.count(), 5000);
}

#[test]
fn estimate_methods() {
    let ht = json_ok(&["estimate", &model("mm1.toml")]);
    assert_schema("estimate.schema.json", &ht);
    let ctmc = json_ok(&["estimate", &model("mm1.toml"), "--method", "ctmc", "--truncation", "200"]);
    assert_schema("estimate.schema.json", &ctmc);
    assert!((ctmc["mean_sojourn"].as_f64().unwrap() - 2.0).abs() < 1e-8);
    let sim = json_ok(&[
        "estimate",
        &model("mm1.toml"),
        "--method",
        "simulation",
        "--jobs",
        "20000",
        "--reps",
        "4",
    ]);
    assert_schema("estimate.schema.json", &sim);
    assert!(sim["half_width"].as_f64().unwrap() > 0.0);
    let list = lpsnet(&["estimate", "--list"]);
    assert_eq!(code(&list), 0);
    assert_eq!(String::from_utf8_lossy(&list.stdout).lines().count(), 5);
}

#[test]
fn validate_subset() {
    let out = lpsnet(&["validate", "--rows", "1", "--no-sim"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("10.2466"), "{text}");
    assert!(text.contains("approximation: 1/1"));

    let doc = json_ok(&["validate", "--rows", "1,9", "--jobs", "4000", "--reps", "2", "--json"]);
    assert_schema("validate.schema.json", &doc);
    assert_eq!(doc["rows"].as_array().unwrap().len(), 2);
    assert_eq!(doc["simulation_run"], 2);
}

#[test]
fn validate_full_approximation_column() {
    let doc = json_ok(&["validate", "--no-sim", "--json", "--strict"]);
    assert_schema("validate.schema.json", &doc);
    assert_eq!(doc["approximation_passed"], 16);
    assert!(doc["simulation"].is_null());
}
