//! End-to-end checks of the command-line surface: solve → structure →
//! simulate round trips, sweep exit codes, and the verification suite.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semtrack"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("semtrack-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("failed to spawn semtrack")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn solve_policy(dir: &Path) -> PathBuf {
    let policy = dir.join("policy.json");
    let out = run(bin().args([
        "solve",
        "--p",
        "0.8",
        "--q",
        "0.5",
        "--mu",
        "0.3",
        "--battery",
        "4",
        "--aoi-bound",
        "6",
        "--metric",
        "real_time_error",
        "--out",
        policy.to_str().unwrap(),
    ]));
    assert_success(&out, "solve");
    policy
}

#[test]
fn solve_structure_simulate_round_trip() {
    let dir = tmp_dir("roundtrip");
    let policy = solve_policy(&dir);

    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&policy).unwrap()).unwrap();
    assert_eq!(doc["schema"], 1);
    assert!(doc["gain"].as_f64().unwrap() > 0.0);
    assert_eq!(doc["config"]["q"], 0.5);

    let out = run(bin().args([
        "structure",
        "--policy",
        policy.to_str().unwrap(),
        "--slice",
        "1,0",
    ]));
    assert_success(&out, "structure");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("slice buffer=1 estimate=0"));
    assert!(text.lines().count() >= 7); // 2 comments + 5 battery rows

    let stats_path = dir.join("stats.json");
    let trace_path = dir.join("trace.csv");
    let out = run(bin().args([
        "simulate",
        "--policy",
        policy.to_str().unwrap(),
        "--horizon",
        "20000",
        "--seeds",
        "1,2,3,4,5",
        "--out",
        stats_path.to_str().unwrap(),
        "--trace",
        trace_path.to_str().unwrap(),
    ]));
    assert_success(&out, "simulate");
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&stats_path).unwrap()).unwrap();
    let mean = stats["real_time_error"]["mean"].as_f64().unwrap();
    assert!(mean > 0.0 && mean < 1.0);
    let trace = std::fs::read_to_string(&trace_path).unwrap();
    assert!(trace.starts_with("t,e,X,x_tilde,x_hat,theta,delta,Delta,action"));

    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn simulate_rejects_mismatched_config() {
    let dir = tmp_dir("mismatch");
    let policy = solve_policy(&dir);
    let out = run(bin().args([
        "simulate",
        "--policy",
        policy.to_str().unwrap(),
        "--p",
        "0.9", // differs from the policy's config
        "--q",
        "0.5",
        "--mu",
        "0.3",
        "--battery",
        "4",
        "--aoi-bound",
        "6",
        "--horizon",
        "10000",
    ]));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("different configuration"));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn sweep_reports_partial_failures_with_exit_code_two() {
    let dir = tmp_dir("sweep");
    let prefix = dir.join("battery");
    // E = 1 cannot cover c_s + c_t = 2: that point errors, the rest run.
    let out = run(bin().args([
        "sweep",
        "--metric",
        "real_time_error",
        "--sweep",
        "E",
        "--values",
        "1,3",
        "--policies",
        "optimal,baseline",
        "--p",
        "0.8",
        "--q",
        "0.6",
        "--mu",
        "0.4",
        "--aoi-bound",
        "5",
        "--horizon",
        "15000",
        "--seeds",
        "1,2,3,4,5",
        "--out",
        prefix.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(2));
    let csv = std::fs::read_to_string(prefix.with_extension("csv")).unwrap();
    assert!(csv.contains("point_error"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 3); // header + 2 rows
    assert!(prefix.with_extension("json").exists());
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tmp_dir("configfile");
    let conf = dir.join("system.conf");
    std::fs::write(
        &conf,
        "p = 0.8\nq = 0.5\nmu = 0.2\nE = 4\nN = 6\ndistortion = rte\nsource = binary\n",
    )
    .unwrap();
    let policy = dir.join("policy.json");
    // --mu overrides the file's 0.2.
    let out = run(bin().args([
        "solve",
        "--config",
        conf.to_str().unwrap(),
        "--mu",
        "0.4",
        "--metric",
        "real_time_error",
        "--out",
        policy.to_str().unwrap(),
    ]));
    assert_success(&out, "solve with config file");
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&policy).unwrap()).unwrap();
    assert_eq!(doc["config"]["mu"], 0.4);
    assert_eq!(doc["config"]["q"], 0.5);
    assert_eq!(doc["config"]["battery_capacity"], 4);
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn bundled_example_config_parses() {
    let dir = tmp_dir("bundled");
    let conf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example.conf");
    let policy = dir.join("policy.json");
    let out = run(bin().args([
        "solve",
        "--config",
        conf.to_str().unwrap(),
        "--aoi-bound",
        "8", // keep the smoke test quick
        "--metric",
        "real_time_error",
        "--out",
        policy.to_str().unwrap(),
    ]));
    assert_success(&out, "solve with bundled config");
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn sweep_lists_presets() {
    let out = run(bin().args(["sweep", "--list-presets"]));
    assert_success(&out, "list presets");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("error_vs_energy_rate"));
    assert!(text.contains("aoii_vs_battery_capacity"));
}

#[test]
fn verify_passes() {
    let out = run(bin().arg("verify"));
    assert_success(&out, "verify");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("all checks passed"));
    assert!(!text.contains("FAIL"));
}
