//! The replan, measure, update loop and campaigns over random maps.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{SensorSpec, Target, TargetGenerator, UncertaintyStore};
use crate::baselines::{plan_greedy, plan_lawnmower, LawnmowerPhase, PlannerMethod, StepLimits};
use crate::efld;
use crate::eid::{EidMethod, EntropyParams};
use crate::ergodic::{
    optimize, ErgodicProblem, OptimizerSettings, SpectralBasis, TrajectoryBundle, WeightForm,
};
use crate::error::{Error, Result};
use crate::field::{Domain, Point, ScalarField};
use crate::smoke::{generate_smoke_sequence, visibility, SmokeParams};

/// Ergodic planner and shared motion settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSettings {
    /// Modes per dimension, `K`.
    pub modes: usize,
    /// Planning horizon `T`, in steps.
    pub horizon: usize,
    pub dt: f64,
    /// Per-axis speed bound. `None` allows half a percent of the domain width
    /// per step.
    pub u_max: Option<f64>,
    pub control_weight: f64,
    pub weight_form: WeightForm,
    pub optimizer: OptimizerSettings,
}

impl Default for PlannerSettings {
    fn default() -> Self {
        Self {
            modes: 8,
            horizon: 100,
            dt: 0.1,
            u_max: None,
            control_weight: 0.01,
            weight_form: WeightForm::Sobolev,
            optimizer: OptimizerSettings::default(),
        }
    }
}

impl PlannerSettings {
    pub fn limits(&self, domain: &Domain) -> StepLimits {
        StepLimits {
            dt: self.dt,
            u_max: self.u_max.unwrap_or(0.005 * domain.extents()[0] / self.dt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub domain: Domain,
    pub smoke: SmokeParams,
    /// Precomputed density frames; generated from `smoke` when absent.
    pub smoke_file: Option<PathBuf>,
    /// Explicit targets. When empty they are drawn by `target_generator`.
    pub targets: Vec<Target>,
    pub target_generator: TargetGenerator,
    pub agent_count: usize,
    /// Explicit starts; when empty agents line up along the bottom edge.
    pub start_states: Vec<Point>,
    pub method: PlannerMethod,
    pub eid: EidMethod,
    pub entropy: EntropyParams,
    /// Footprint radius; `None` means 1.5 grid cells.
    pub footprint_radius: Option<f64>,
    /// Steps between replans, `t_u`.
    pub replan_interval: usize,
    /// Number of steps, `t_f`.
    pub final_time: usize,
    pub planner: PlannerSettings,
    pub seed: u64,
    /// Keep V, the EID and the density at every replan.
    pub snapshots: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domain: Domain::unit(64, 64).expect("valid default domain"),
            smoke: SmokeParams {
                random_source: true,
                ..SmokeParams::default()
            },
            smoke_file: None,
            targets: Vec::new(),
            target_generator: TargetGenerator::default(),
            agent_count: 3,
            start_states: Vec::new(),
            method: PlannerMethod::Ergodic,
            eid: EidMethod::ShannonEntropy,
            entropy: EntropyParams::default(),
            footprint_radius: None,
            replan_interval: 50,
            final_time: 500,
            planner: PlannerSettings::default(),
            seed: 7,
            snapshots: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn sensor(&self) -> SensorSpec {
        match self.footprint_radius {
            Some(r) => SensorSpec { footprint_radius: r },
            None => SensorSpec::cells(&self.domain, 1.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replan_interval == 0 || self.replan_interval > self.final_time {
            return Err(Error::param("replan_interval", "need 1 <= t_u <= t_f"));
        }
        if self.agent_count == 0 {
            return Err(Error::param("agent_count", "need at least one agent"));
        }
        if !self.start_states.is_empty() && self.start_states.len() != self.agent_count {
            return Err(Error::param("start_states", "need one start per agent"));
        }
        for &p in &self.start_states {
            self.domain.check_contains(p)?;
        }
        let horizon_needed = self.replan_interval.min(self.final_time) + 1;
        if self.planner.horizon < horizon_needed {
            return Err(Error::param(
                "planner.horizon",
                format!("must cover a replan interval: need at least {horizon_needed}"),
            ));
        }
        if self.planner.modes == 0 {
            return Err(Error::param("planner.modes", "must be at least 1"));
        }
        if !(self.planner.dt.is_finite() && self.planner.dt > 0.0) {
            return Err(Error::param("planner.dt", "must be positive"));
        }
        let limits = self.planner.limits(&self.domain);
        if !(limits.u_max.is_finite() && limits.u_max > 0.0) {
            return Err(Error::param("planner.u_max", "must be positive"));
        }
        self.sensor().validate(&self.domain)?;
        self.smoke.validate()?;
        self.entropy.validate()?;
        for t in &self.targets {
            t.validate(&self.domain)?;
        }
        Ok(())
    }

    pub fn starts(&self) -> Vec<Point> {
        if !self.start_states.is_empty() {
            return self.start_states.clone();
        }
        let [l0, l1] = self.domain.extents();
        let n = self.agent_count as f64;
        (0..self.agent_count)
            .map(|a| Point::new((a as f64 + 0.5) / n * l0, 0.05 * l1))
            .collect()
    }

    pub fn resolved_targets(&self) -> Result<Vec<Target>> {
        if !self.targets.is_empty() {
            return Ok(self.targets.clone());
        }
        self.target_generator
            .generate(&self.domain, self.replan_interval, self.final_time, self.seed)
    }

    /// Density frames, one per step, from the file or the solver.
    pub fn smoke_frames(&self) -> Result<Vec<ScalarField>> {
        match &self.smoke_file {
            Some(path) => efld::load(path),
            None => generate_smoke_sequence(&self.smoke, self.domain, self.final_time, self.seed),
        }
    }
}

/// Seconds spent in each phase of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhaseTimes {
    pub eid: f64,
    pub plan: f64,
    pub execute: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub map_seed: u64,
    pub method: PlannerMethod,
    pub eid: EidMethod,
    /// Optimizer iterations of each replan; zero for the baselines.
    pub iterations: Vec<usize>,
    /// Total uncertainty before the first step and after every step.
    pub mass: Vec<f64>,
    /// Replan in effect during each step, aligned with `mass[1..]`.
    pub replan_of_step: Vec<usize>,
    /// Steps at which a target moved.
    pub reset_steps: Vec<usize>,
    /// Replans whose EID had no mass and were planned against a uniform one.
    pub uniform_fallbacks: usize,
    pub pct_reduction: f64,
}

impl RunMetrics {
    pub fn mean_iterations(&self) -> f64 {
        if self.iterations.is_empty() {
            0.0
        } else {
            self.iterations.iter().sum::<usize>() as f64 / self.iterations.len() as f64
        }
    }

    /// True when the mass never rises except at a target reset.
    pub fn mass_monotone_between_resets(&self) -> bool {
        // a reset during step t lands between mass[t] and mass[t + 1]
        self.mass
            .windows(2)
            .enumerate()
            .all(|(t, w)| w[1] <= w[0] || self.reset_steps.contains(&t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub replan_index: usize,
    pub agent: usize,
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub u_x: f64,
    pub u_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub replan_index: usize,
    pub step: usize,
    pub uncertainty: ScalarField,
    pub eid: ScalarField,
    pub density: ScalarField,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub trajectories: Vec<TrajectoryRow>,
    pub snapshots: Vec<Snapshot>,
    pub times: PhaseTimes,
}

pub fn run(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let frames = config.smoke_frames()?;
    run_with_smoke(config, &frames)
}

/// Run against a given density sequence; `frames[t]` is used for step `t`.
pub fn run_with_smoke(config: &RunConfig, frames: &[ScalarField]) -> Result<RunOutput> {
    config.validate()?;
    let t_f = config.final_time;
    if frames.len() < t_f {
        return Err(Error::param(
            "smoke",
            format!("{} frames cannot cover {t_f} steps", frames.len()),
        ));
    }
    if frames.iter().any(|f| *f.domain() != config.domain) {
        return Err(Error::DomainMismatch);
    }

    let domain = config.domain;
    let sensor = config.sensor();
    let limits = config.planner.limits(&domain);
    let horizon = config.planner.horizon;
    let mut store = UncertaintyStore::new(domain, config.resolved_targets()?)?;
    let mut positions = config.starts();
    let agents = positions.len();
    let basis = match config.method {
        PlannerMethod::Ergodic => Some(SpectralBasis::new(domain, config.planner.modes, config.planner.weight_form)?),
        _ => None,
    };

    let mut metrics = RunMetrics {
        map_seed: config.seed,
        method: config.method,
        eid: config.eid,
        iterations: Vec::new(),
        mass: vec![store.total_mass()],
        replan_of_step: Vec::with_capacity(t_f),
        reset_steps: Vec::new(),
        uniform_fallbacks: 0,
        pct_reduction: 0.0,
    };
    let mut times = PhaseTimes::default();
    let mut trajectories = Vec::with_capacity(agents * (t_f + 1));
    let mut snapshots = Vec::new();

    let mut plan: Option<TrajectoryBundle> = None;
    let mut phases: Vec<LawnmowerPhase> = vec![0; agents];
    let mut phase_log: Vec<Vec<LawnmowerPhase>> = Vec::new();
    let mut executed = 0;

    for (t, frame) in frames[..t_f].iter().enumerate() {
        let step_result: Result<()> = (|| {
            if t > 0 && store.step_targets(t)? {
                metrics.reset_steps.push(t);
            }
            let visible = visibility(frame, config.smoke.cutoff_density)?;

            if t % config.replan_interval == 0 {
                let replan = metrics.iterations.len();
                let clock = Instant::now();
                let v = store.total();
                let eid = config.eid.compute(&v, &visible, &config.entropy, replan as u32)?;
                times.eid += clock.elapsed().as_secs_f64();

                let clock = Instant::now();
                let (bundle, iterations) = match config.method {
                    PlannerMethod::Ergodic => {
                        let basis = basis.clone().expect("basis built for the ergodic planner");
                        let problem =
                            ErgodicProblem::new(basis, &eid, config.planner.control_weight, positions.clone())?;
                        if problem.uniform_fallback {
                            metrics.uniform_fallbacks += 1;
                        }
                        let initial = match &plan {
                            Some(prev) => prev.warm_start(executed)?,
                            None => initial_guess(&domain, &positions, horizon, limits)?,
                        };
                        let out = optimize(&problem, &initial, &config.planner.optimizer)?;
                        (out.bundle, out.iterations)
                    }
                    PlannerMethod::Greedy => {
                        let claim = 2.0 * sensor.footprint_radius;
                        (plan_greedy(&eid, horizon, limits, claim, &positions)?, 0)
                    }
                    PlannerMethod::Lawnmower => {
                        let spacing = 2.0 * sensor.footprint_radius;
                        let lp = plan_lawnmower(&domain, horizon, limits, spacing, &positions, &phases)?;
                        phase_log = lp.phases;
                        (lp.bundle, 0)
                    }
                };
                times.plan += clock.elapsed().as_secs_f64();
                metrics.iterations.push(iterations);
                if config.snapshots {
                    snapshots.push(Snapshot {
                        replan_index: replan,
                        step: t,
                        uncertainty: v,
                        eid,
                        density: frame.clone(),
                    });
                }
                plan = Some(bundle);
                executed = 0;
            }

            let clock = Instant::now();
            let current = plan.as_ref().expect("a plan exists from step 0");
            let replan = metrics.iterations.len() - 1;
            for (a, p) in positions.iter().enumerate() {
                let u = current.controls[a][executed];
                trajectories.push(TrajectoryRow {
                    replan_index: replan,
                    agent: a,
                    t,
                    x: p.x,
                    y: p.y,
                    u_x: u[0],
                    u_y: u[1],
                });
            }
            executed += 1;
            for (a, p) in positions.iter_mut().enumerate() {
                *p = domain.clamp(current.states[a][executed]);
                if !phase_log.is_empty() {
                    phases[a] = phase_log[a][executed];
                }
            }
            for &p in &positions {
                store.measure(p, &visible, &sensor)?;
            }
            times.execute += clock.elapsed().as_secs_f64();
            metrics.replan_of_step.push(replan);
            metrics.mass.push(store.total_mass());
            Ok(())
        })();
        step_result.map_err(|e| e.at_step(t))?;
    }

    let last_replan = metrics.iterations.len() - 1;
    for (a, p) in positions.iter().enumerate() {
        trajectories.push(TrajectoryRow {
            replan_index: last_replan,
            agent: a,
            t: t_f,
            x: p.x,
            y: p.y,
            u_x: 0.0,
            u_y: 0.0,
        });
    }
    let m0 = metrics.mass[0];
    let mf = *metrics.mass.last().expect("mass recorded");
    metrics.pct_reduction = pct_reduction(m0, mf);
    Ok(RunOutput { metrics, trajectories, snapshots, times })
}

pub fn pct_reduction(initial: f64, last: f64) -> f64 {
    if initial > 0.0 {
        100.0 * (1.0 - last / initial)
    } else {
        0.0
    }
}

/// Straight lines fanning out from each start toward a ring around the
/// domain center.
fn initial_guess(domain: &Domain, starts: &[Point], horizon: usize, limits: StepLimits) -> Result<TrajectoryBundle> {
    let [l0, l1] = domain.extents();
    let n = starts.len() as f64;
    let goals: Vec<Point> = (0..starts.len())
        .map(|a| {
            let angle = 2.0 * std::f64::consts::PI * (a as f64 + 0.25) / n;
            Point::new(l0 * (0.5 + 0.25 * angle.cos()), l1 * (0.5 + 0.25 * angle.sin()))
        })
        .collect();
    TrajectoryBundle::straight_line(starts, &goals, horizon, limits.dt, limits.u_max)
}

/// Per-step rows of the metrics table.
pub fn write_metrics_csv(runs: &[&RunMetrics], mut w: impl std::io::Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(&mut w);
    out.write_record([
        "map_seed",
        "method",
        "eid",
        "replan_index",
        "iterations",
        "step",
        "uncertainty_mass",
        "pct_reduction",
    ])?;
    for m in runs {
        let m0 = m.mass[0];
        for (step, &mass) in m.mass.iter().enumerate() {
            let replan = if step == 0 { 0 } else { m.replan_of_step[step - 1] };
            out.write_record([
                m.map_seed.to_string(),
                m.method.to_string(),
                m.eid.to_string(),
                replan.to_string(),
                m.iterations[replan].to_string(),
                step.to_string(),
                format!("{mass:.12e}"),
                format!("{:.9}", pct_reduction(m0, mass)),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("<metrics>", e))?;
    Ok(())
}

pub fn write_trajectories_csv(rows: &[TrajectoryRow], w: impl std::io::Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<trajectories>", e))?;
    Ok(())
}

/// Write `bytes` to `path` atomically.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    efld::write_atomic(path, bytes)
}

/// Outputs of a single run: metrics, trajectories, the effective config and
/// optional snapshots.
pub fn write_run_outputs(dir: &Path, config: &RunConfig, output: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut buf = Vec::new();
    write_metrics_csv(&[&output.metrics], &mut buf)?;
    write_file(&dir.join("metrics.csv"), &buf)?;
    let mut buf = Vec::new();
    write_trajectories_csv(&output.trajectories, &mut buf)?;
    write_file(&dir.join("trajectories.csv"), &buf)?;
    write_file(&dir.join("config.json"), config.to_json()?.as_bytes())?;
    if !output.snapshots.is_empty() {
        let pick = |f: fn(&Snapshot) -> &ScalarField| output.snapshots.iter().map(f).cloned().collect::<Vec<_>>();
        efld::save(dir.join("uncertainty.efld"), &pick(|s| &s.uncertainty))?;
        efld::save(dir.join("eid.efld"), &pick(|s| &s.eid))?;
        efld::save(dir.join("density.efld"), &pick(|s| &s.density))?;
    }
    Ok(())
}

/// Whether campaign targets stay put.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Use the generator as configured.
    Config,
    Static,
    /// Every generated target moves.
    Moving,
}

impl std::str::FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "static" => Ok(TargetMode::Static),
            "moving" => Ok(TargetMode::Moving),
            "config" => Ok(TargetMode::Config),
            other => Err(Error::param("targets", format!("expected static or moving, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSpec {
    pub maps: usize,
    pub methods: Vec<PlannerMethod>,
    pub eids: Vec<EidMethod>,
    pub targets: TargetMode,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct CampaignRun {
    pub map_seed: u64,
    pub method: PlannerMethod,
    pub eid: EidMethod,
    pub outcome: std::result::Result<RunMetrics, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: PlannerMethod,
    pub eid: EidMethod,
    pub runs: usize,
    pub failures: usize,
    pub mean_pct_reduction: f64,
    pub std_pct_reduction: f64,
    pub mean_iterations: f64,
    pub std_iterations: f64,
}

#[derive(Debug, Clone)]
pub struct Campaign {
    pub runs: Vec<CampaignRun>,
}

/// Map seed of the `index`-th map of a campaign based on `seed`.
pub fn map_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// Config of one campaign run.
pub fn campaign_config(base: &RunConfig, spec: &CampaignSpec, index: usize, method: PlannerMethod, eid: EidMethod) -> RunConfig {
    let mut cfg = base.clone();
    cfg.seed = map_seed(base.seed, index);
    cfg.method = method;
    cfg.eid = eid;
    cfg.targets.clear();
    match spec.targets {
        TargetMode::Config => {}
        TargetMode::Static => cfg.target_generator.moving = 0,
        TargetMode::Moving => cfg.target_generator.moving = cfg.target_generator.count,
    }
    cfg
}

/// Density frames of one campaign map, or why they could not be produced.
pub type MapSmoke = std::result::Result<Arc<Vec<ScalarField>>, String>;

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::param("threads", e.to_string()))
}

/// Smoke for the first `maps` maps of a campaign: the configured file for all
/// of them, or one seeded solver run per map.
pub fn campaign_smoke(base: &RunConfig, maps: usize, threads: Option<usize>) -> Result<Vec<MapSmoke>> {
    if let Some(path) = &base.smoke_file {
        let frames = Arc::new(efld::load(path)?);
        return Ok(vec![Ok(frames); maps]);
    }
    let pool = thread_pool(threads)?;
    Ok(pool.install(|| {
        (0..maps)
            .into_par_iter()
            .map(|i| {
                generate_smoke_sequence(&base.smoke, base.domain, base.final_time, map_seed(base.seed, i))
                    .map(Arc::new)
                    .map_err(|e| e.to_string())
            })
            .collect()
    }))
}

/// Every (method, EID) pair on `maps` seeded maps. Smoke is computed once per
/// map; run failures are recorded rather than aborting the campaign.
pub fn run_campaign(base: &RunConfig, spec: &CampaignSpec) -> Result<Campaign> {
    check_spec(base, spec)?;
    let smoke = campaign_smoke(base, spec.maps, spec.threads)?;
    run_campaign_with_smoke(base, spec, &smoke)
}

fn check_spec(base: &RunConfig, spec: &CampaignSpec) -> Result<()> {
    if spec.maps == 0 {
        return Err(Error::param("maps", "must be at least 1"));
    }
    if spec.methods.is_empty() || spec.eids.is_empty() {
        return Err(Error::param("methods", "need at least one method and one EID"));
    }
    base.validate()
}

/// [`run_campaign`] with precomputed smoke, one entry per map.
pub fn run_campaign_with_smoke(base: &RunConfig, spec: &CampaignSpec, smoke: &[MapSmoke]) -> Result<Campaign> {
    check_spec(base, spec)?;
    if smoke.len() < spec.maps {
        return Err(Error::param("smoke", format!("{} maps need smoke, got {}", spec.maps, smoke.len())));
    }
    let jobs: Vec<(usize, PlannerMethod, EidMethod)> = (0..spec.maps)
        .flat_map(|i| {
            spec.methods
                .iter()
                .flat_map(move |&m| spec.eids.iter().map(move |&e| (i, m, e)))
        })
        .collect();
    let pool = thread_pool(spec.threads)?;
    let runs = pool.install(|| {
        jobs.into_par_iter()
            .map(|(i, method, eid)| {
                let cfg = campaign_config(base, spec, i, method, eid);
                let outcome = match &smoke[i] {
                    Ok(frames) => run_with_smoke(&cfg, frames)
                        .map(|o| o.metrics)
                        .map_err(|e| e.to_string()),
                    Err(e) => Err(format!("smoke generation failed: {e}")),
                };
                CampaignRun { map_seed: cfg.seed, method, eid, outcome }
            })
            .collect()
    });
    Ok(Campaign { runs })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl Campaign {
    pub fn successes(&self) -> impl Iterator<Item = &RunMetrics> {
        self.runs.iter().filter_map(|r| r.outcome.as_ref().ok())
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.outcome.is_err()).count()
    }

    /// One row per (method, EID) pair, in first-seen order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(PlannerMethod, EidMethod)> = Vec::new();
        for r in &self.runs {
            if !keys.contains(&(r.method, r.eid)) {
                keys.push((r.method, r.eid));
            }
        }
        keys.into_iter()
            .map(|(method, eid)| {
                let group: Vec<&CampaignRun> = self.runs.iter().filter(|r| r.method == method && r.eid == eid).collect();
                let ok: Vec<&RunMetrics> = group.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
                let pct: Vec<f64> = ok.iter().map(|m| m.pct_reduction).collect();
                let its: Vec<f64> = ok.iter().map(|m| m.mean_iterations()).collect();
                let (mean_pct_reduction, std_pct_reduction) = mean_std(&pct);
                let (mean_iterations, std_iterations) = mean_std(&its);
                SummaryRow {
                    method,
                    eid,
                    runs: group.len(),
                    failures: group.len() - ok.len(),
                    mean_pct_reduction,
                    std_pct_reduction,
                    mean_iterations,
                    std_iterations,
                }
            })
            .collect()
    }

    pub fn find(&self, method: PlannerMethod, eid: EidMethod) -> Option<SummaryRow> {
        self.summary().into_iter().find(|r| r.method == method && r.eid == eid)
    }

    pub fn write_metrics_csv(&self, w: impl std::io::Write) -> Result<()> {
        let ok: Vec<&RunMetrics> = self.successes().collect();
        write_metrics_csv(&ok, w)
    }

    /// One row per run.
    pub fn write_runs_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["map_seed", "method", "eid", "status", "pct_reduction", "mean_iterations", "error"])?;
        for r in &self.runs {
            match &r.outcome {
                Ok(m) => out.write_record([
                    r.map_seed.to_string(),
                    r.method.to_string(),
                    r.eid.to_string(),
                    "ok".into(),
                    format!("{:.9}", m.pct_reduction),
                    format!("{:.6}", m.mean_iterations()),
                    String::new(),
                ])?,
                Err(e) => out.write_record([
                    r.map_seed.to_string(),
                    r.method.to_string(),
                    r.eid.to_string(),
                    "failed".into(),
                    String::new(),
                    String::new(),
                    e.clone(),
                ])?,
            }
        }
        out.flush().map_err(|e| Error::io("<runs>", e))?;
        Ok(())
    }

    pub fn write_summary_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in self.summary() {
            out.serialize(row)?;
        }
        out.flush().map_err(|e| Error::io("<summary>", e))?;
        Ok(())
    }
}
