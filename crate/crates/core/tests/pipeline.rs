use std::time::Instant;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ember_core::baselines::PlannerMethod;
use ember_core::efld;
use ember_core::eid::EidMethod;
use ember_core::sim::{run, run_with_smoke, write_run_outputs, RunConfig};
use ember_core::smoke::{
    advect_with, generate_smoke_sequence, max_abs_divergence, project, Backtrace, SmokeParams,
};
use ember_core::{Domain, ScalarField};

fn random_field(d: Domain, rng: &mut ChaCha8Rng, scale: f64) -> ScalarField {
    ScalarField::from_fn(d, |_| rng.random_range(-scale..scale))
}

#[test]
fn five_hundred_frames_in_under_ten_seconds() {
    let d = Domain::unit(64, 64).unwrap();
    let clock = Instant::now();
    let frames = generate_smoke_sequence(&SmokeParams::default(), d, 500, 3).unwrap();
    let elapsed = clock.elapsed().as_secs_f64();
    assert_eq!(frames.len(), 500);
    assert!(frames.iter().all(|f| f.is_finite() && f.min() >= 0.0));
    assert!(elapsed < 10.0, "{elapsed:.1} s");
}

#[test]
fn projection_removes_divergence_from_random_fields() {
    let d = Domain::unit(64, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let u = random_field(d, &mut rng, 1.0);
        let v = random_field(d, &mut rng, 1.0);
        let (pu, pv) = project(&u, &v, 200).unwrap();
        let div = max_abs_divergence(&pu, &pv).unwrap();
        assert!(div < 1e-4, "{div}");
    }
}

#[test]
fn smoke_survives_an_efld_round_trip() {
    let d = Domain::unit(16, 16).unwrap();
    let frames = generate_smoke_sequence(&SmokeParams::default(), d, 20, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.efld");
    efld::save(&path, &frames).unwrap();
    assert_eq!(efld::load(&path).unwrap(), frames);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn advection_creates_no_new_extrema(seed in any::<u64>(), dt in 0.001f64..0.2, midpoint in any::<bool>()) {
        let d = Domain::unit(24, 24).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = ScalarField::from_fn(d, |_| rng.random_range(0.0..5.0));
        let u = random_field(d, &mut rng, 2.0);
        let v = random_field(d, &mut rng, 2.0);
        let bt = if midpoint { Backtrace::Midpoint } else { Backtrace::Euler };
        let out = advect_with(&q, &u, &v, dt, bt).unwrap();
        let eps = 1e-12;
        prop_assert!(out.min() >= q.min() - eps);
        prop_assert!(out.max() <= q.max() + eps);
    }
}

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::from_json(
        r#"{
            "domain": { "extents": [1.0, 1.0], "resolution": [32, 32] },
            "final_time": 120,
            "replan_interval": 20,
            "planner": { "horizon": 40, "modes": 6 }
        }"#,
    )
    .unwrap();
    cfg.target_generator.count = 2;
    cfg.target_generator.moving = 2;
    cfg
}

#[test]
fn moving_targets_reset_mass_only_when_they_move() {
    let cfg = small_config();
    let frames = cfg.smoke_frames().unwrap();
    for method in PlannerMethod::ALL {
        let mut c = cfg.clone();
        c.method = method;
        let m = run_with_smoke(&c, &frames).unwrap().metrics;
        assert!(!m.reset_steps.is_empty(), "{method}");
        assert!(m.mass_monotone_between_resets(), "{method}");
        assert_eq!(m.mass.len(), c.final_time + 1);
        assert_eq!(m.iterations.len(), c.final_time / c.replan_interval);
    }
}

#[test]
fn every_eid_runs_and_reduces_uncertainty() {
    let mut cfg = small_config();
    cfg.target_generator.moving = 0;
    let frames = cfg.smoke_frames().unwrap();
    for eid in EidMethod::ALL {
        cfg.eid = eid;
        let m = run_with_smoke(&cfg, &frames).unwrap().metrics;
        assert!(m.reset_steps.is_empty());
        assert!(m.pct_reduction > 0.0, "{}", eid.as_str());
        assert!(m.mass.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn run_outputs_land_on_disk_and_reload() {
    let mut cfg = small_config();
    cfg.snapshots = true;
    let out = run(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run_outputs(dir.path(), &cfg, &out).unwrap();
    let back = RunConfig::load(dir.path().join("config.json")).unwrap();
    assert_eq!(back, cfg);
    let eid = efld::load(dir.path().join("eid.efld")).unwrap();
    assert_eq!(eid.len(), out.metrics.iterations.len());
    let rows = std::fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + cfg.agent_count * (cfg.final_time + 1));
}

#[test]
fn a_short_smoke_file_is_rejected() {
    let cfg = small_config();
    let frames = generate_smoke_sequence(&cfg.smoke, cfg.domain, 10, 1).unwrap();
    let err = run_with_smoke(&cfg, &frames).unwrap_err();
    assert!(err.to_string().contains("frames"));
}
