//! Lawnmower and greedy planners.
//!
//! Both produce a [`TrajectoryBundle`] under the same per-axis step bound as
//! the ergodic planner, `u_max * dt`.

use serde::{Deserialize, Serialize};

use crate::agents::disk_cells;
use crate::ergodic::{step_toward, TrajectoryBundle};
use crate::error::{Error, Result};
use crate::field::{Domain, Point, ScalarField};

/// Shared motion limits of every planner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLimits {
    pub dt: f64,
    pub u_max: f64,
}

impl StepLimits {
    pub fn step_size(&self) -> f64 {
        self.u_max * self.dt
    }
}

fn bundle_from_paths(paths: Vec<Vec<Point>>, limits: StepLimits) -> Result<TrajectoryBundle> {
    let controls = paths
        .iter()
        .map(|path| {
            path.windows(2)
                .map(|w| [(w[1].x - w[0].x) / limits.dt, (w[1].y - w[0].y) / limits.dt])
                .collect()
        })
        .collect();
    let bundle = TrajectoryBundle {
        states: paths,
        controls,
        dt: limits.dt,
        u_max: limits.u_max,
    };
    Ok(bundle)
}

/// Per-agent progress through its sweep: index of the next waypoint in the
/// back-and-forth cycle.
pub type LawnmowerPhase = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct LawnmowerPlan {
    pub bundle: TrajectoryBundle,
    /// `phases[agent][t]` is the waypoint being approached from state `t`.
    pub phases: Vec<Vec<LawnmowerPhase>>,
}

/// Boustrophedon waypoints of one horizontal band: lanes `spacing` apart,
/// traversed alternately left-to-right and right-to-left, then retraced.
pub fn band_waypoints(domain: &Domain, band: usize, bands: usize, spacing: f64) -> Vec<Point> {
    let [l0, l1] = domain.extents();
    let (lo, hi) = (band as f64 * l1 / bands as f64, (band + 1) as f64 * l1 / bands as f64);
    let inset = (spacing / 2.0).min(l0 / 2.0);
    // evenly spread lanes, no further apart than `spacing`
    let count = ((hi - lo) / spacing).ceil().max(1.0) as usize;
    let lanes: Vec<f64> = (0..count)
        .map(|i| lo + (i as f64 + 0.5) * (hi - lo) / count as f64)
        .collect();
    let mut forward = Vec::with_capacity(2 * lanes.len());
    for (n, &y) in lanes.iter().enumerate() {
        let (a, b) = if n % 2 == 0 { (inset, l0 - inset) } else { (l0 - inset, inset) };
        forward.push(Point::new(a, y));
        forward.push(Point::new(b, y));
    }
    // ping-pong: retrace without repeating the turning points
    let back: Vec<Point> = forward.iter().rev().skip(1).take(forward.len().saturating_sub(2)).copied().collect();
    forward.extend(back);
    forward
}

pub fn plan_lawnmower(
    domain: &Domain,
    horizon: usize,
    limits: StepLimits,
    spacing: f64,
    starts: &[Point],
    phases: &[LawnmowerPhase],
) -> Result<LawnmowerPlan> {
    if starts.is_empty() {
        return Err(Error::param("agent_count", "need at least one agent"));
    }
    if phases.len() != starts.len() {
        return Err(Error::param("phases", "need one phase per agent"));
    }
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::param("spacing", "must be positive"));
    }
    check_horizon(horizon)?;
    let bands = starts.len();
    let step = limits.step_size();
    let mut paths = Vec::with_capacity(bands);
    let mut phase_log = Vec::with_capacity(bands);
    for (agent, (&start, &phase)) in starts.iter().zip(phases).enumerate() {
        let waypoints = band_waypoints(domain, agent, bands, spacing);
        let mut next = phase % waypoints.len();
        let mut x = start;
        let mut path = vec![x];
        let mut log = vec![next];
        while path.len() < horizon {
            let d = step_toward(x, waypoints[next], step);
            x = Point::new(x.x + d[0], x.y + d[1]);
            if x.distance(waypoints[next]) < 1e-12 {
                x = waypoints[next];
                next = (next + 1) % waypoints.len();
            }
            path.push(x);
            log.push(next);
        }
        paths.push(path);
        phase_log.push(log);
    }
    Ok(LawnmowerPlan {
        bundle: bundle_from_paths(paths, limits)?,
        phases: phase_log,
    })
}

fn check_horizon(horizon: usize) -> Result<()> {
    if horizon == 0 {
        Err(Error::param("horizon", "must be at least 1"))
    } else {
        Ok(())
    }
}

/// Greedy exploitation: every agent claims the best unclaimed cell of a
/// working copy of the EID, zeroes a disk of `claim_radius` around it, then
/// walks straight there and hovers. Agents claim in index order and ties go
/// to the lowest cell index.
pub fn plan_greedy(
    eid: &ScalarField,
    horizon: usize,
    limits: StepLimits,
    claim_radius: f64,
    starts: &[Point],
) -> Result<TrajectoryBundle> {
    if starts.is_empty() {
        return Err(Error::param("agent_count", "need at least one agent"));
    }
    check_horizon(horizon)?;
    if !eid.is_finite() {
        return Err(Error::param("eid", "contains non-finite values"));
    }
    let domain = *eid.domain();
    let mut work = eid.clone();
    let step = limits.step_size();
    let goals: Vec<Point> = starts
        .iter()
        .map(|&start| {
            let k = work.argmax();
            if work.values()[k] <= 0.0 {
                return start;
            }
            let (i, j) = domain.coords(k);
            let goal = domain.cell_center(i, j);
            for c in disk_cells(&domain, goal, claim_radius) {
                work.values_mut()[c] = 0.0;
            }
            work.values_mut()[k] = 0.0;
            goal
        })
        .collect();
    let paths = starts
        .iter()
        .zip(&goals)
        .map(|(&start, &goal)| {
            let mut x = start;
            let mut path = Vec::with_capacity(horizon);
            path.push(x);
            while path.len() < horizon {
                let d = step_toward(x, goal, step);
                let next = Point::new(x.x + d[0], x.y + d[1]);
                x = if next.distance(goal) < 1e-12 { goal } else { next };
                path.push(x);
            }
            path
        })
        .collect();
    bundle_from_paths(paths, limits)
}

/// Which planner drives the agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerMethod {
    Ergodic,
    Greedy,
    Lawnmower,
}

impl PlannerMethod {
    pub const ALL: [PlannerMethod; 3] = [PlannerMethod::Ergodic, PlannerMethod::Greedy, PlannerMethod::Lawnmower];

    pub fn as_str(self) -> &'static str {
        match self {
            PlannerMethod::Ergodic => "ergodic",
            PlannerMethod::Greedy => "greedy",
            PlannerMethod::Lawnmower => "lawnmower",
        }
    }
}

impl std::fmt::Display for PlannerMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PlannerMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ergodic" => Ok(PlannerMethod::Ergodic),
            "greedy" => Ok(PlannerMethod::Greedy),
            "lawnmower" => Ok(PlannerMethod::Lawnmower),
            other => Err(Error::param("method", format!("unknown planner `{other}`"))),
        }
    }
}
