use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "domain": { "extents": [1.0, 1.0], "resolution": [32, 32] },
  "final_time": 40,
  "replan_interval": 20,
  "planner": { "horizon": 30, "modes": 6 }
}"#;

fn ember(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ember"))
        .args(args)
        .current_dir(dir)
        .env("EMBER_THREADS", "1")
        .output()
        .expect("spawn ember")
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn smoke_writes_requested_frame_count() {
    let dir = workspace();
    let o = ember(&["smoke", "--config", "cfg.json", "--steps", "12", "--out", "smoke.efld"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let frames = ember_core::efld::load(dir.path().join("smoke.efld")).unwrap();
    assert_eq!(frames.len(), 12);
    assert!(dir.path().join("smoke.config.json").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("frames 12"));
}

#[test]
fn missing_config_is_named_in_the_error() {
    let dir = workspace();
    let o = ember(&["smoke", "--config", "absent.json", "--out", "s.efld"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("absent.json"));
}

#[test]
fn zero_steps_is_rejected() {
    let dir = workspace();
    let o = ember(&["smoke", "--config", "cfg.json", "--steps", "0", "--out", "s.efld"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("steps"));
    assert!(!dir.path().join("s.efld").exists());
}

#[test]
fn run_outputs_flags_override_and_repeat_byte_for_byte() {
    let dir = workspace();
    let args = |out: &'static str| {
        vec!["run", "--config", "cfg.json", "--out", out, "--seed", "7", "--method", "greedy", "--eid", "mask"]
    };
    let a = ember(&args("a"), dir.path());
    assert!(a.status.success(), "{}", stderr(&a));
    let b = ember(&args("b"), dir.path());
    assert!(b.status.success(), "{}", stderr(&b));

    let metrics_a = fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let metrics_b = fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(metrics_a, metrics_b);
    assert!(dir.path().join("a/trajectories.csv").exists());

    let text = String::from_utf8(metrics_a).unwrap();
    assert!(text.starts_with("map_seed,method,eid,replan_index,iterations,step,uncertainty_mass,pct_reduction\n"));
    assert!(text.lines().nth(1).unwrap().starts_with("7,greedy,mask,"));

    let cfg = ember_core::sim::RunConfig::load(dir.path().join("a/config.json")).unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.domain.nx(), 32);
    assert_eq!(cfg.method.as_str(), "greedy");
}

#[test]
fn rerun_overwrites_instead_of_appending() {
    let dir = workspace();
    let args = ["run", "--config", "cfg.json", "--out", "r", "--method", "lawnmower"];
    assert!(ember(&args, dir.path()).status.success());
    let first = fs::read(dir.path().join("r/metrics.csv")).unwrap();
    assert!(ember(&args, dir.path()).status.success());
    assert_eq!(first, fs::read(dir.path().join("r/metrics.csv")).unwrap());
}

#[test]
fn run_with_snapshots_exports_fields() {
    let dir = workspace();
    let o = ember(&["run", "--config", "cfg.json", "--out", "r", "--snapshots", "--method", "lawnmower"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let eid = ember_core::efld::load(dir.path().join("r/eid.efld")).unwrap();
    assert_eq!(eid.len(), 2);
}

#[test]
fn run_reports_the_failing_step() {
    let dir = workspace();
    let o = ember(&["smoke", "--config", "cfg.json", "--steps", "10", "--out", "short.efld"], dir.path());
    assert!(o.status.success());
    let o = ember(&["run", "--config", "cfg.json", "--out", "r", "--smoke", "short.efld"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("frames"), "{}", stderr(&o));
}

#[test]
fn bench_writes_one_row_per_run_and_a_summary() {
    let dir = workspace();
    let o = ember(
        &["bench", "--config", "cfg.json", "--out", "b", "--maps", "2", "--methods", "ergodic,greedy,lawnmower", "--targets", "static"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let runs = fs::read_to_string(dir.path().join("b/runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 6);
    let summary = fs::read_to_string(dir.path().join("b/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3);
    assert!(dir.path().join("b/metrics.csv").exists());
    assert!(dir.path().join("b/config.json").exists());
}

#[test]
fn bench_rejects_an_empty_method_list() {
    let dir = workspace();
    let o = ember(&["bench", "--config", "cfg.json", "--out", "b", "--methods", ""], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("usage"));
}

#[test]
fn bench_rejects_bad_thread_counts() {
    let dir = workspace();
    let o = Command::new(env!("CARGO_BIN_EXE_ember"))
        .args(["bench", "--config", "cfg.json", "--out", "b", "--maps", "1"])
        .current_dir(dir.path())
        .env("EMBER_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("EMBER_THREADS"));
}
