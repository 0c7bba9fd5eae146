//! Targets, the sensor footprint and the measurement update.
//!
//! The uncertainty map is kept as one residual field per target so that a
//! moving target can be reset without touching what is left of the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Domain, GaussianPeak, Point, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub step: usize,
    pub point: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub id: u32,
    /// Current peak. Its amplitude is the value restored on every move.
    pub peak: GaussianPeak,
    #[serde(default)]
    pub waypoints: Vec<Waypoint>,
}

impl Target {
    pub fn fixed(id: u32, peak: GaussianPeak) -> Self {
        Self { id, peak, waypoints: Vec::new() }
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        self.peak.validate(domain)?;
        if self.waypoints.windows(2).any(|w| w[1].step <= w[0].step) {
            return Err(Error::param("waypoints", format!("target {}: steps must increase", self.id)));
        }
        for w in &self.waypoints {
            domain.check_contains(w.point)?;
        }
        Ok(())
    }

    pub fn is_moving(&self) -> bool {
        !self.waypoints.is_empty()
    }

    /// Where this target sits at `step`, given every event up to and
    /// including it.
    pub fn event_at(&self, step: usize) -> Option<Point> {
        self.waypoints.iter().find(|w| w.step == step).map(|w| w.point)
    }
}

/// Waypoints every `interval` steps in `(0, final_step)`, drawn uniformly
/// over the domain.
pub fn moving_schedule(domain: &Domain, interval: usize, final_step: usize, rng: &mut impl Rng) -> Vec<Waypoint> {
    if interval == 0 {
        return Vec::new();
    }
    let [l0, l1] = domain.extents();
    (1..)
        .map(|k| k * interval)
        .take_while(|&s| s < final_step)
        .map(|step| Waypoint {
            step,
            point: Point::new(rng.random_range(0.0..=l0), rng.random_range(0.0..=l1)),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub footprint_radius: f64,
}

impl SensorSpec {
    /// A footprint of `cells` grid spacings.
    pub fn cells(domain: &Domain, cells: f64) -> Self {
        Self { footprint_radius: cells * domain.dx().max(domain.dy()) }
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        let [l0, l1] = domain.extents();
        let r = self.footprint_radius;
        if !(r.is_finite() && r > 0.0 && r < l0.min(l1) / 2.0) {
            return Err(Error::param(
                "footprint_radius",
                format!("must lie in (0, {}), got {r}", l0.min(l1) / 2.0),
            ));
        }
        Ok(())
    }
}

/// Indices of the cells whose centers lie within `radius` of `center`.
pub fn disk_cells(domain: &Domain, center: Point, radius: f64) -> Vec<usize> {
    let (dx, dy) = (domain.dx(), domain.dy());
    let lo = |c: f64, h: f64| ((c - radius) / h - 0.5).floor().max(0.0) as usize;
    let hi = |c: f64, h: f64, n: usize| (((c + radius) / h - 0.5).ceil().max(0.0) as usize).min(n - 1);
    let r2 = radius * radius;
    let mut out = Vec::new();
    for j in lo(center.y, dy)..=hi(center.y, dy, domain.ny()) {
        for i in lo(center.x, dx)..=hi(center.x, dx, domain.nx()) {
            if domain.cell_center(i, j).distance_sq(center) <= r2 {
                out.push(domain.index(i, j));
            }
        }
    }
    out
}

/// `V(s) <- (1 - m(s)) V(s)` for every cell in the footprint.
pub fn apply_measurement(
    uncertainty: &ScalarField,
    position: Point,
    visibility: &ScalarField,
    sensor: &SensorSpec,
) -> Result<ScalarField> {
    let mut out = uncertainty.clone();
    measure_in_place(&mut out, position, visibility, sensor)?;
    Ok(out)
}

pub fn measure_in_place(
    uncertainty: &mut ScalarField,
    position: Point,
    visibility: &ScalarField,
    sensor: &SensorSpec,
) -> Result<()> {
    uncertainty.check_same_domain(visibility)?;
    let domain = *uncertainty.domain();
    domain.check_contains(position)?;
    let cells = disk_cells(&domain, position, sensor.footprint_radius);
    let m = visibility.values();
    let v = uncertainty.values_mut();
    for k in cells {
        v[k] *= 1.0 - m[k].clamp(0.0, 1.0);
    }
    Ok(())
}

/// The uncertainty map as a sum of per-target residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyStore {
    targets: Vec<Target>,
    residuals: Vec<ScalarField>,
}

impl UncertaintyStore {
    pub fn new(domain: Domain, targets: Vec<Target>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::param("targets", "at least one target is required"));
        }
        let residuals = targets
            .iter()
            .map(|t| {
                t.validate(&domain)?;
                t.peak.rasterize(domain)
            })
            .collect::<Result<_>>()?;
        Ok(Self { targets, residuals })
    }

    pub fn domain(&self) -> &Domain {
        self.residuals[0].domain()
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn residual(&self, index: usize) -> &ScalarField {
        &self.residuals[index]
    }

    pub fn total(&self) -> ScalarField {
        let mut sum = self.residuals[0].clone();
        for r in &self.residuals[1..] {
            sum.add_assign(r).expect("residuals share a domain");
        }
        sum
    }

    pub fn total_mass(&self) -> f64 {
        self.total().total_mass()
    }

    /// Apply one measurement to every residual.
    pub fn measure(&mut self, position: Point, visibility: &ScalarField, sensor: &SensorSpec) -> Result<()> {
        for r in &mut self.residuals {
            measure_in_place(r, position, visibility, sensor)?;
        }
        Ok(())
    }

    /// Move every target with an event at `step` and rebuild its residual at
    /// full amplitude. Returns whether anything moved.
    pub fn step_targets(&mut self, step: usize) -> Result<bool> {
        let domain = *self.domain();
        let mut moved = false;
        for (t, r) in self.targets.iter_mut().zip(&mut self.residuals) {
            if let Some(p) = t.event_at(step) {
                t.peak.center = p;
                *r = t.peak.rasterize(domain)?;
                moved = true;
            }
        }
        Ok(moved)
    }
}

/// Functional form of [`UncertaintyStore::step_targets`].
pub fn step_targets(store: &UncertaintyStore, step: usize) -> Result<(UncertaintyStore, bool)> {
    let mut next = store.clone();
    let moved = next.step_targets(step)?;
    Ok((next, moved))
}

/// Random peaks for one map; `moving` of them get a waypoint schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetGenerator {
    pub count: usize,
    pub moving: usize,
    pub amplitude: f64,
    pub sigma: [f64; 2],
    /// Fraction of each side kept clear of peak centers.
    pub margin: f64,
    /// Steps between moves; `None` uses twice the replan interval.
    pub move_interval: Option<usize>,
}

impl Default for TargetGenerator {
    fn default() -> Self {
        Self {
            count: 3,
            moving: 0,
            amplitude: 100.0,
            sigma: [0.05, 0.1],
            margin: 0.1,
            move_interval: None,
        }
    }
}

impl TargetGenerator {
    pub fn generate(&self, domain: &Domain, replan_interval: usize, final_step: usize, seed: u64) -> Result<Vec<Target>> {
        if self.count == 0 {
            return Err(Error::param("count", "at least one target is required"));
        }
        if self.moving > self.count {
            return Err(Error::param("moving", "cannot exceed the target count"));
        }
        if !(self.sigma[0] > 0.0 && self.sigma[0] <= self.sigma[1]) {
            return Err(Error::param("sigma", "need 0 < min <= max"));
        }
        if !(0.0..0.5).contains(&self.margin) {
            return Err(Error::param("margin", "must lie in [0, 0.5)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [l0, l1] = domain.extents();
        let (m0, m1) = (self.margin * l0, self.margin * l1);
        let interval = self.move_interval.unwrap_or(2 * replan_interval);
        (0..self.count)
            .map(|i| {
                let center = Point::new(rng.random_range(m0..=l0 - m0), rng.random_range(m1..=l1 - m1));
                let sigma = if self.sigma[0] == self.sigma[1] {
                    self.sigma[0]
                } else {
                    rng.random_range(self.sigma[0]..self.sigma[1])
                };
                let peak = GaussianPeak::new(center, self.amplitude, sigma);
                let waypoints = if i < self.moving {
                    moving_schedule(domain, interval, final_step, &mut rng)
                } else {
                    Vec::new()
                };
                let target = Target { id: i as u32, peak, waypoints };
                target.validate(domain)?;
                Ok(target)
            })
            .collect()
    }
}
