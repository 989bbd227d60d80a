use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn scene(name: &str) -> String {
    fixtures().join(format!("scenes/{name}.json")).display().to_string()
}

fn rvoik(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvoik"))
        .args(args)
        .env_remove("RVOIK_SCENE_DIR")
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&out.stdout));
    })
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const STILL_SCENE: &str = r#"{
    "name": "still",
    "manipulators": [{"chain": "baxter_like", "initial": [-0.5, -0.3, 0.0, 1.2, 0.0, 0.6, 0.0]}],
    "obstacles": [],
    "sim": {"dt": 0.01, "duration": DURATION}
}"#;

fn still_scene(dir: &tempfile::TempDir, duration: f64) -> String {
    let path = dir.path().join("still.json");
    std::fs::write(&path, STILL_SCENE.replace("DURATION", &duration.to_string())).unwrap();
    path.display().to_string()
}

#[test]
fn validate_reports_counts_and_effective_config() {
    let out = rvoik(&["validate", &scene("bench_2arms"), "--seed", "9", "-N", "5"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["valid"], true);
    assert_eq!(v["manipulators"].as_array().unwrap().len(), 2);
    assert_eq!(v["ticks"], 100);
    let text = v["config"].to_string();
    assert!(text.contains("\"rng_seed\":9"), "{text}");
    assert!(text.contains("\"N\":5"), "{text}");
}

#[test]
fn solve_without_obstacles_is_safe() {
    let dir = tempfile::tempdir().unwrap();
    let out = rvoik(&["solve", &still_scene(&dir, 1.0)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["status"], "safe");
    let arm = &v["manipulators"][0];
    assert_eq!(arm["config"].as_array().unwrap().len(), 7);
    assert!(arm["degraded"].is_null());
}

#[test]
fn solve_position_only_keeps_orientation() {
    let dir = tempfile::tempdir().unwrap();
    let path = still_scene(&dir, 1.0);
    let before = stdout_json(&rvoik(&["solve", &path]));
    let p = &before["manipulators"][0]["end_effector"]["position"];
    let moved = format!("{},{},{}", p[0].as_f64().unwrap() + 0.01, p[1], p[2]);
    let out = rvoik(&["solve", &path, "--position", &moved]);
    assert_eq!(code(&out), 0);
    let arm = &stdout_json(&out)["manipulators"][0];
    for k in 0..4 {
        let a = arm["end_effector"]["quaternion"][k].as_f64().unwrap();
        let b = before["manipulators"][0]["end_effector"]["quaternion"][k].as_f64().unwrap();
        assert!((a - b).abs() < 1e-3);
    }
    let x = arm["end_effector"]["position"][0].as_f64().unwrap();
    assert!((x - p[0].as_f64().unwrap() - 0.01).abs() < 1e-4);
}

#[test]
fn unreachable_target_exits_with_error_kind() {
    let out = rvoik(&["solve", &scene("colliding_seed"), "--position", "3,0,0"]);
    assert_eq!(code(&out), 1);
    let v = stdout_json(&out);
    assert_eq!(v["status"], "error");
    assert_eq!(v["error"]["kind"], "UnreachableTarget");
}

#[test]
fn negative_coordinates_parse() {
    let out = rvoik(&["solve", &scene("colliding_seed"), "--position", "-3,-1,0", "--rpy", "0,-1.5,0"]);
    assert_eq!(code(&out), 1);
    assert_eq!(stdout_json(&out)["error"]["kind"], "UnreachableTarget");
}

#[test]
fn rpy_without_position_is_a_usage_error() {
    let out = rvoik(&["solve", &scene("colliding_seed"), "--rpy", "0,0,0"]);
    assert_eq!(code(&out), 1);
    assert_eq!(stdout_json(&out)["error"]["kind"], "Usage");
}

#[test]
fn corridor_solve_finds_a_safe_configuration() {
    let out = rvoik(&["solve", &scene("corridor_solve")]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    let d = &v["manipulators"][0]["diagnostics"];
    assert!(d["min_psi"].as_f64().unwrap() > 0.0);
    assert!(d["pso_iterations"].as_u64().unwrap() > 0);
}

#[test]
fn simulate_writes_a_log_that_check_accepts() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("seed.log").display().to_string();
    let out = rvoik(&["simulate", &scene("colliding_seed"), "--out", &log]);
    assert_eq!(code(&out), 0);
    let summary = stdout_json(&out);
    assert_eq!(summary["oracle"]["violation_count"], 0);
    let out = rvoik(&["check", &log]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out)["scene"], "colliding_seed");
}

#[test]
fn simulate_streams_the_log_without_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = rvoik(&["simulate", &still_scene(&dir, 0.05)]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2 + 5);
}

#[test]
fn zero_duration_gives_header_and_columns_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = rvoik(&["simulate", &still_scene(&dir, 0.0)]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);
}

#[test]
fn initial_collision_is_an_error() {
    let out = rvoik(&["simulate", &scene("initial_collision")]);
    assert_eq!(code(&out), 1);
    assert_eq!(stdout_json(&out)["error"]["kind"], "InitialCollision");
}

#[test]
fn missing_scene_is_an_io_error() {
    let out = rvoik(&["validate", "no/such/scene.json"]);
    assert_eq!(code(&out), 1);
    assert_eq!(stdout_json(&out)["error"]["kind"], "Io");
}

#[test]
fn check_flags_tunneling() {
    let log = fixtures().join("logs/tunneling.log").display().to_string();
    let out = rvoik(&["check", &log]);
    assert_eq!(code(&out), 3);
    let v = stdout_json(&out);
    assert_eq!(v["oracle"]["violation_count"], 1);
    assert_eq!(v["oracle"]["first_violation"]["tick"], 2);
}

#[test]
fn truncated_log_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixtures().join("logs/tunneling.log")).unwrap();
    let path = dir.path().join("cut.log");
    std::fs::write(&path, &text[..text.len() - 15]).unwrap();
    let out = rvoik(&["check", &path.display().to_string()]);
    assert_eq!(code(&out), 1);
    assert_eq!(stdout_json(&out)["error"]["kind"], "Parse");
}

#[test]
fn bench_prints_one_csv_row_per_scene() {
    let out = rvoik(&["bench", &scene("bench_1arm_1obstacle"), &scene("bench_2arms"), "--reps", "1"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    let header: Vec<&str> = lines[0].split(',').collect();
    let median = header.iter().position(|c| *c == "median_ms").unwrap();
    for row in &lines[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), header.len());
        assert!(cells[median].parse::<f64>().unwrap() > 0.0);
    }
    assert!(lines[1].starts_with("bench_1arm_1obstacle,7,8,"));
}

#[test]
fn bench_rejects_zero_repetitions() {
    let out = rvoik(&["bench", &scene("bench_1arm_1obstacle"), "--reps", "0"]);
    assert_eq!(code(&out), 1);
    assert_eq!(stdout_json(&out)["error"]["kind"], "Usage");
}

#[test]
fn scene_dir_resolves_bare_names() {
    let out = Command::new(env!("CARGO_BIN_EXE_rvoik"))
        .args(["validate", "bench_1arm_1obstacle"])
        .env("RVOIK_SCENE_DIR", fixtures().join("scenes"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out)["scene"], "bench_1arm_1obstacle");
}

#[test]
fn help_exits_cleanly() {
    let out = rvoik(&["--help"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("simulate"));
}
