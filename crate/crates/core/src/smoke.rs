//! Collocated-grid smoke solver and the density-to-visibility model.
//!
//! One [`step_fluid`] call injects the source, applies buoyancy and optional
//! viscosity, self-advects the velocity, projects it onto the discretely
//! divergence-free subspace and finally advects density and temperature.
//!
//! Walls are free-slip: the normal velocity component is mirrored with a sign
//! flip across each wall, pressure and transported scalars have zero normal
//! gradient. The divergence and gradient operators are central differences
//! built from those ghost rules, and the pressure operator is exactly their
//! composition, so a converged solve leaves zero discrete divergence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Domain, Point, ScalarField};

/// Linear solver used for the pressure Poisson equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PressureSolver {
    /// Conjugate-residual Krylov iteration; residual norm is non-increasing.
    #[default]
    ConjugateResidual,
    /// Damped Jacobi relaxation (weight 2/3).
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSettings {
    pub solver: PressureSolver,
    pub iters: usize,
    /// Stop early once the max-norm of the discrete divergence drops below this.
    pub tol: f64,
}

impl Default for ProjectionSettings {
    fn default() -> Self {
        Self {
            solver: PressureSolver::ConjugateResidual,
            iters: 200,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmokeParams {
    /// Fixed source location. `None` together with `random_source = false`
    /// disables emission.
    pub source_center: Option<Point>,
    /// Draw the source location from the sequence seed.
    pub random_source: bool,
    pub source_radius: f64,
    /// Density added to every source cell per step.
    pub emission_rate: f64,
    pub source_temperature: f64,
    pub ambient_temperature: f64,
    pub buoyancy_alpha: f64,
    pub buoyancy_beta: f64,
    pub viscosity: f64,
    pub dt: f64,
    pub projection_iters: usize,
    pub projection_tol: f64,
    pub pressure_solver: PressureSolver,
    pub backtrace: Backtrace,
    pub cutoff_density: f64,
    /// Fraction of density removed each step.
    pub density_decay: f64,
    /// Fraction of the temperature excess over ambient removed each step.
    pub temperature_decay: f64,
}

impl Default for SmokeParams {
    fn default() -> Self {
        Self {
            source_center: Some(Point::new(0.5, 0.15)),
            random_source: false,
            source_radius: 0.1,
            emission_rate: 0.1,
            source_temperature: 1.0,
            ambient_temperature: 0.0,
            buoyancy_alpha: 0.3,
            buoyancy_beta: 1.0,
            viscosity: 0.0,
            dt: 0.05,
            projection_iters: 200,
            projection_tol: 1e-9,
            pressure_solver: PressureSolver::ConjugateResidual,
            backtrace: Backtrace::Midpoint,
            cutoff_density: DEFAULT_CUTOFF_DENSITY,
            density_decay: 0.0,
            temperature_decay: 0.0,
        }
    }
}

/// Half of the peak plume density observed over 500 default steps on a
/// 64x64 unit box.
pub const DEFAULT_CUTOFF_DENSITY: f64 = 3.0;

impl SmokeParams {
    /// No emission at all; the fluid stays quiescent.
    pub fn without_source() -> Self {
        Self {
            source_center: None,
            random_source: false,
            ..Self::default()
        }
    }

    pub fn projection(&self) -> ProjectionSettings {
        ProjectionSettings {
            solver: self.pressure_solver,
            iters: self.projection_iters,
            tol: self.projection_tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be positive, got {v}")))
            }
        };
        let nonneg = |name: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be nonnegative, got {v}")))
            }
        };
        positive("dt", self.dt)?;
        positive("cutoff_density", self.cutoff_density)?;
        positive("source_radius", self.source_radius)?;
        nonneg("emission_rate", self.emission_rate)?;
        nonneg("buoyancy_alpha", self.buoyancy_alpha)?;
        nonneg("buoyancy_beta", self.buoyancy_beta)?;
        nonneg("viscosity", self.viscosity)?;
        nonneg("projection_tol", self.projection_tol)?;
        if self.projection_iters == 0 {
            return Err(Error::param("projection_iters", "must be at least 1"));
        }
        for (name, v) in [
            ("density_decay", self.density_decay),
            ("temperature_decay", self.temperature_decay),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::param(name, format!("must lie in [0, 1), got {v}")));
            }
        }
        if !(self.source_temperature.is_finite() && self.ambient_temperature.is_finite()) {
            return Err(Error::param("temperature", "must be finite"));
        }
        Ok(())
    }
}

/// Velocity, density and temperature on one shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    pub velocity_u: ScalarField,
    pub velocity_v: ScalarField,
    pub density: ScalarField,
    pub temperature: ScalarField,
}

impl FluidState {
    /// Still air at ambient temperature, no smoke.
    pub fn quiescent(domain: Domain, ambient_temperature: f64) -> Self {
        Self {
            velocity_u: ScalarField::zeros(domain),
            velocity_v: ScalarField::zeros(domain),
            density: ScalarField::zeros(domain),
            temperature: ScalarField::constant(domain, ambient_temperature),
        }
    }

    pub fn domain(&self) -> &Domain {
        self.density.domain()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.domain();
        for f in [&self.velocity_u, &self.velocity_v, &self.temperature] {
            if f.domain() != d {
                return Err(Error::DomainMismatch);
            }
        }
        Ok(())
    }

    fn check_finite(&self, step: usize) -> Result<()> {
        for (what, f) in [
            ("velocity_u", &self.velocity_u),
            ("velocity_v", &self.velocity_v),
            ("density", &self.density),
            ("temperature", &self.temperature),
        ] {
            if !f.is_finite() {
                return Err(Error::NonFinite { what, step });
            }
        }
        Ok(())
    }
}

fn source_cells(domain: &Domain, center: Point, radius: f64) -> Vec<usize> {
    let r2 = radius * radius;
    let mut cells: Vec<usize> = (0..domain.len())
        .filter(|&idx| {
            let (i, j) = domain.coords(idx);
            domain.cell_center(i, j).distance_sq(center) <= r2
        })
        .collect();
    if cells.is_empty() {
        let (i, j) = domain.cell_of(center);
        cells.push(domain.index(i, j));
    }
    cells
}

/// Add `emission_rate` density to every cell of the source disk and heat
/// those cells to the source temperature. Returns the injected mass.
pub fn inject_source(state: &mut FluidState, center: Point, params: &SmokeParams) -> f64 {
    let domain = *state.domain();
    let cells = source_cells(&domain, center, params.source_radius);
    let rho = state.density.values_mut();
    for &c in &cells {
        rho[c] += params.emission_rate;
    }
    let temp = state.temperature.values_mut();
    for &c in &cells {
        temp[c] = temp[c].max(params.source_temperature);
    }
    params.emission_rate * cells.len() as f64 * domain.cell_area()
}

/// `v += dt * (-alpha * rho + beta * (T - T_amb))`, with `+y` pointing up.
pub fn apply_buoyancy(state: &mut FluidState, params: &SmokeParams) {
    let rho = state.density.values();
    let temp = state.temperature.values();
    for (k, v) in state.velocity_v.values_mut().iter_mut().enumerate() {
        let force = -params.buoyancy_alpha * rho[k]
            + params.buoyancy_beta * (temp[k] - params.ambient_temperature);
        *v += params.dt * force;
    }
}

/// Five-point Laplacian with zero normal gradient at the walls.
fn laplacian_neumann(f: &ScalarField) -> Vec<f64> {
    let d = f.domain();
    let (nx, ny) = (d.nx(), d.ny());
    let (idx2, idy2) = (1.0 / (d.dx() * d.dx()), 1.0 / (d.dy() * d.dy()));
    let v = f.values();
    let mut out = vec![0.0; v.len()];
    for j in 0..ny {
        for i in 0..nx {
            let c = v[d.index(i, j)];
            let w = v[d.index(i.saturating_sub(1), j)];
            let e = v[d.index((i + 1).min(nx - 1), j)];
            let s = v[d.index(i, j.saturating_sub(1))];
            let n = v[d.index(i, (j + 1).min(ny - 1))];
            out[d.index(i, j)] = (w - 2.0 * c + e) * idx2 + (s - 2.0 * c + n) * idy2;
        }
    }
    out
}

/// Explicit viscous diffusion, sub-stepped to stay inside the stability limit.
pub fn diffuse_velocity(state: &mut FluidState, viscosity: f64, dt: f64) {
    if viscosity <= 0.0 {
        return;
    }
    let d = *state.domain();
    let h2 = d.dx().min(d.dy()).powi(2);
    let limit = 0.2 * h2 / viscosity;
    let substeps = (dt / limit).ceil().max(1.0) as usize;
    let sub_dt = dt / substeps as f64;
    for field in [&mut state.velocity_u, &mut state.velocity_v] {
        for _ in 0..substeps {
            let lap = laplacian_neumann(field);
            for (x, l) in field.values_mut().iter_mut().zip(lap) {
                *x += viscosity * sub_dt * l;
            }
        }
    }
}

/// Semi-Lagrangian transport: every cell takes the bilinearly interpolated
/// value found at its backtraced position `s - dt * u(s)`, clamped to the
/// cell-center hull.
pub fn advect(
    quantity: &ScalarField,
    velocity_u: &ScalarField,
    velocity_v: &ScalarField,
    dt: f64,
) -> Result<ScalarField> {
    advect_with(quantity, velocity_u, velocity_v, dt, Backtrace::Euler)
}

/// How far back along the flow a cell looks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backtrace {
    /// `s - dt * u(s)`.
    #[default]
    Euler,
    /// `s - dt * u(s - dt/2 * u(s))`.
    Midpoint,
}

pub fn advect_with(
    quantity: &ScalarField,
    velocity_u: &ScalarField,
    velocity_v: &ScalarField,
    dt: f64,
    backtrace: Backtrace,
) -> Result<ScalarField> {
    quantity.check_same_domain(velocity_u)?;
    quantity.check_same_domain(velocity_v)?;
    let d = *quantity.domain();
    let (u, v) = (velocity_u.values(), velocity_v.values());
    let (sx, sy) = (dt / d.dx(), dt / d.dy());
    let mut out = Vec::with_capacity(d.len());
    for j in 0..d.ny() {
        for i in 0..d.nx() {
            let k = d.index(i, j);
            // backtrace in grid units; the sampler clamps to the hull
            let (gx, gy) = match backtrace {
                Backtrace::Euler => (i as f64 - sx * u[k], j as f64 - sy * v[k]),
                Backtrace::Midpoint => {
                    let mx = i as f64 - 0.5 * sx * u[k];
                    let my = j as f64 - 0.5 * sy * v[k];
                    let um = velocity_u.sample_grid(mx, my);
                    let vm = velocity_v.sample_grid(mx, my);
                    (i as f64 - sx * um, j as f64 - sy * vm)
                }
            };
            out.push(quantity.sample_grid(gx, gy));
        }
    }
    Ok(ScalarField::from_raw(d, out))
}

/// Central-difference divergence with free-slip wall ghosts.
pub fn divergence(velocity_u: &ScalarField, velocity_v: &ScalarField) -> Result<ScalarField> {
    velocity_u.check_same_domain(velocity_v)?;
    let d = *velocity_u.domain();
    let mut out = vec![0.0; d.len()];
    divergence_into(&d, velocity_u.values(), velocity_v.values(), &mut out);
    Ok(ScalarField::from_raw(d, out))
}

pub fn max_abs_divergence(velocity_u: &ScalarField, velocity_v: &ScalarField) -> Result<f64> {
    Ok(divergence(velocity_u, velocity_v)?
        .values()
        .iter()
        .fold(0.0, |m, v| m.max(v.abs())))
}

fn divergence_into(d: &Domain, u: &[f64], v: &[f64], out: &mut [f64]) {
    let (nx, ny) = (d.nx(), d.ny());
    let (hx, hy) = (0.5 / d.dx(), 0.5 / d.dy());
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx {
            let k = row + i;
            let ue = if i + 1 < nx { u[k + 1] } else { -u[k] };
            let uw = if i > 0 { u[k - 1] } else { -u[k] };
            let vn = if j + 1 < ny { v[k + nx] } else { -v[k] };
            let vs = if j > 0 { v[k - nx] } else { -v[k] };
            out[k] = (ue - uw) * hx + (vn - vs) * hy;
        }
    }
}

fn gradient_into(d: &Domain, p: &[f64], gx: &mut [f64], gy: &mut [f64]) {
    let (nx, ny) = (d.nx(), d.ny());
    let (hx, hy) = (0.5 / d.dx(), 0.5 / d.dy());
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx {
            let k = row + i;
            let pe = if i + 1 < nx { p[k + 1] } else { p[k] };
            let pw = if i > 0 { p[k - 1] } else { p[k] };
            let pn = if j + 1 < ny { p[k + nx] } else { p[k] };
            let ps = if j > 0 { p[k - nx] } else { p[k] };
            gx[k] = (pe - pw) * hx;
            gy[k] = (pn - ps) * hy;
        }
    }
}

/// The pressure operator `div(grad p)` built from the two operators above.
struct PoissonOperator {
    domain: Domain,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl PoissonOperator {
    fn new(domain: Domain) -> Self {
        Self {
            domain,
            gx: vec![0.0; domain.len()],
            gy: vec![0.0; domain.len()],
        }
    }

    fn apply(&mut self, p: &[f64], out: &mut [f64]) {
        gradient_into(&self.domain, p, &mut self.gx, &mut self.gy);
        divergence_into(&self.domain, &self.gx, &self.gy, out);
    }

    /// Diagonal entries; the operator is a sum of 1D operators so the
    /// diagonal separates.
    fn diagonal(&self) -> Vec<f64> {
        let d = &self.domain;
        let diag_1d = |n: usize, h: f64| -> Vec<f64> {
            let entry = |k: usize| -> f64 {
                // 1D: (G p)_i = (p_{i+1} - p_{i-1}) / 2h with mirrored ghosts,
                // (D g)_i = (g_{i+1} - g_{i-1}) / 2h with sign-flipped ghosts.
                let g = |i: usize| -> f64 {
                    let pe = if i + 1 < n { (i + 1 == k) as u8 as f64 } else { (i == k) as u8 as f64 };
                    let pw = if i > 0 { (i - 1 == k) as u8 as f64 } else { (i == k) as u8 as f64 };
                    (pe - pw) / (2.0 * h)
                };
                let ge = if k + 1 < n { g(k + 1) } else { -g(k) };
                let gw = if k > 0 { g(k - 1) } else { -g(k) };
                (ge - gw) / (2.0 * h)
            };
            (0..n).map(entry).collect()
        };
        let dx = diag_1d(d.nx(), d.dx());
        let dy = diag_1d(d.ny(), d.dy());
        (0..d.len())
            .map(|k| {
                let (i, j) = d.coords(k);
                dx[i] + dy[j]
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn solve_pressure(domain: Domain, rhs: &[f64], settings: &ProjectionSettings) -> Vec<f64> {
    let n = rhs.len();
    let mut op = PoissonOperator::new(domain);
    let mut x = vec![0.0; n];
    if max_abs(rhs) <= settings.tol {
        return x;
    }
    match settings.solver {
        PressureSolver::ConjugateResidual => {
            let mut r = rhs.to_vec();
            let mut ar = vec![0.0; n];
            op.apply(&r, &mut ar);
            let mut p = r.clone();
            let mut ap = ar.clone();
            let mut r_ar = dot(&r, &ar);
            for _ in 0..settings.iters {
                let ap_ap = dot(&ap, &ap);
                if ap_ap == 0.0 || r_ar == 0.0 {
                    break;
                }
                let alpha = r_ar / ap_ap;
                for k in 0..n {
                    x[k] += alpha * p[k];
                    r[k] -= alpha * ap[k];
                }
                if max_abs(&r) <= settings.tol {
                    break;
                }
                op.apply(&r, &mut ar);
                let next = dot(&r, &ar);
                let beta = next / r_ar;
                r_ar = next;
                for k in 0..n {
                    p[k] = r[k] + beta * p[k];
                    ap[k] = ar[k] + beta * ap[k];
                }
            }
        }
        PressureSolver::Jacobi => {
            const OMEGA: f64 = 2.0 / 3.0;
            let diag = op.diagonal();
            let mut lx = vec![0.0; n];
            for _ in 0..settings.iters {
                op.apply(&x, &mut lx);
                let mut worst: f64 = 0.0;
                for k in 0..n {
                    let r = rhs[k] - lx[k];
                    worst = worst.max(r.abs());
                    x[k] += OMEGA * r / diag[k];
                }
                if worst <= settings.tol {
                    break;
                }
            }
        }
    }
    x
}

/// Remove the divergent part of a velocity field.
///
/// Runs `iters` iterations of the default solver with no early exit.
pub fn project(
    velocity_u: &ScalarField,
    velocity_v: &ScalarField,
    iters: usize,
) -> Result<(ScalarField, ScalarField)> {
    project_with(
        velocity_u,
        velocity_v,
        &ProjectionSettings {
            iters,
            tol: 0.0,
            ..ProjectionSettings::default()
        },
    )
}

pub fn project_with(
    velocity_u: &ScalarField,
    velocity_v: &ScalarField,
    settings: &ProjectionSettings,
) -> Result<(ScalarField, ScalarField)> {
    let rhs = divergence(velocity_u, velocity_v)?;
    let d = *rhs.domain();
    let pressure = solve_pressure(d, rhs.values(), settings);
    let mut gx = vec![0.0; d.len()];
    let mut gy = vec![0.0; d.len()];
    gradient_into(&d, &pressure, &mut gx, &mut gy);
    let mut u = velocity_u.clone();
    let mut v = velocity_v.clone();
    for (a, g) in u.values_mut().iter_mut().zip(&gx) {
        *a -= g;
    }
    for (a, g) in v.values_mut().iter_mut().zip(&gy) {
        *a -= g;
    }
    Ok((u, v))
}

/// Advance the fluid by one step; `step` only labels errors.
pub fn step_fluid(
    state: &FluidState,
    params: &SmokeParams,
    source: Option<Point>,
    step: usize,
) -> Result<FluidState> {
    state.validate()?;
    let mut next = state.clone();
    if let Some(center) = source {
        if params.emission_rate > 0.0 {
            inject_source(&mut next, center, params);
        }
    }
    apply_buoyancy(&mut next, params);
    diffuse_velocity(&mut next, params.viscosity, params.dt);

    let bt = params.backtrace;
    let u = advect_with(&next.velocity_u, &next.velocity_u, &next.velocity_v, params.dt, bt)?;
    let v = advect_with(&next.velocity_v, &next.velocity_u, &next.velocity_v, params.dt, bt)?;
    let (u, v) = project_with(&u, &v, &params.projection())?;

    let mut density = advect_with(&next.density, &u, &v, params.dt, bt)?;
    let mut temperature = advect_with(&next.temperature, &u, &v, params.dt, bt)?;
    let keep = 1.0 - params.density_decay;
    for r in density.values_mut() {
        *r = (*r * keep).max(0.0);
    }
    if params.temperature_decay > 0.0 {
        let keep = 1.0 - params.temperature_decay;
        let amb = params.ambient_temperature;
        for t in temperature.values_mut() {
            *t = amb + (*t - amb) * keep;
        }
    }
    next = FluidState {
        velocity_u: u,
        velocity_v: v,
        density,
        temperature,
    };
    next.check_finite(step)?;
    Ok(next)
}

/// Linear-cutoff sensor visibility: `1 - rho / c` up to the cutoff, 0 beyond.
pub fn visibility(density: &ScalarField, cutoff: f64) -> Result<ScalarField> {
    if !(cutoff.is_finite() && cutoff > 0.0) {
        return Err(Error::param("cutoff_density", format!("must be positive, got {cutoff}")));
    }
    Ok(density.map(|rho| visibility_coefficient(rho, cutoff)))
}

#[inline]
pub fn visibility_coefficient(rho: f64, cutoff: f64) -> f64 {
    if rho <= cutoff {
        (1.0 - rho / cutoff).min(1.0)
    } else {
        0.0
    }
}

/// Where the source sits for a given sequence seed.
pub fn source_location(params: &SmokeParams, domain: &Domain, seed: u64) -> Option<Point> {
    if params.random_source {
        let [l0, l1] = domain.extents();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Some(Point::new(
            l0 * rng.random_range(0.15..0.85),
            l1 * rng.random_range(0.1..0.6),
        ))
    } else {
        params.source_center
    }
}

/// Run the solver from rest and return the density after every step.
pub fn generate_smoke_sequence(
    params: &SmokeParams,
    domain: Domain,
    steps: usize,
    seed: u64,
) -> Result<Vec<ScalarField>> {
    params.validate()?;
    if steps == 0 {
        return Err(Error::param("steps", "must be at least 1"));
    }
    let source = source_location(params, &domain, seed);
    if let Some(c) = source {
        domain.check_contains(c)?;
    }
    let mut state = FluidState::quiescent(domain, params.ambient_temperature);
    let mut frames = Vec::with_capacity(steps);
    for step in 0..steps {
        state = step_fluid(&state, params, source, step)?;
        frames.push(state.density.clone());
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_velocity(d: Domain, seed: u64) -> (ScalarField, ScalarField) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = (0..d.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = (0..d.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        (ScalarField::new(d, u).unwrap(), ScalarField::new(d, v).unwrap())
    }

    #[test]
    fn quiescent_state_is_a_fixed_point() {
        let d = Domain::unit(16, 16).unwrap();
        let params = SmokeParams::without_source();
        let s0 = FluidState::quiescent(d, params.ambient_temperature);
        let s1 = step_fluid(&s0, &params, None, 0).unwrap();
        assert_eq!(s0, s1);
    }

    #[test]
    fn uniform_density_pushes_down_before_projection() {
        let d = Domain::unit(8, 8).unwrap();
        let params = SmokeParams::default();
        let mut s = FluidState::quiescent(d, params.ambient_temperature);
        s.density = ScalarField::constant(d, 2.0);
        apply_buoyancy(&mut s, &params);
        let want = -params.buoyancy_alpha * 2.0 * params.dt;
        for &v in s.velocity_v.values() {
            assert!((v - want).abs() < 1e-15);
        }
        assert!(s.velocity_u.values().iter().all(|&u| u == 0.0));
    }

    #[test]
    fn source_injects_exact_mass() {
        let d = Domain::unit(32, 32).unwrap();
        let params = SmokeParams::default();
        let mut s = FluidState::quiescent(d, 0.0);
        let mass = inject_source(&mut s, Point::new(0.5, 0.5), &params);
        assert!((s.density.total_mass() - mass).abs() < 1e-12);
        assert_eq!(s.density.max(), params.emission_rate);
        assert_eq!(s.temperature.max(), params.source_temperature);
        // a radius smaller than a cell still hits one cell
        let tiny = SmokeParams { source_radius: 1e-4, ..params };
        let mut s = FluidState::quiescent(d, 0.0);
        let mass = inject_source(&mut s, Point::new(0.5, 0.5), &tiny);
        assert!((mass - tiny.emission_rate * d.cell_area()).abs() < 1e-15);
    }

    #[test]
    fn advect_trivial_cases() {
        let d = Domain::unit(12, 12).unwrap();
        let q = ScalarField::from_fn(d, |p| (3.0 * p.x).sin() + p.y);
        let zero = ScalarField::zeros(d);
        assert_eq!(advect(&q, &zero, &zero, 0.1).unwrap(), q);
        let c = ScalarField::constant(d, 4.25);
        let (u, v) = random_velocity(d, 3);
        let out = advect(&c, &u, &v, 0.3).unwrap();
        assert!(out.values().iter().all(|&x| (x - 4.25).abs() < 1e-14));
    }

    #[test]
    fn blob_translates_under_uniform_velocity() {
        let d = Domain::unit(64, 64).unwrap();
        let blob = ScalarField::from_fn(d, |p| {
            (-((p.x - 0.25).powi(2) + (p.y - 0.5).powi(2)) / 0.005).exp()
        });
        let (dt, speed, steps) = (0.05, 1.0, 10);
        let u = ScalarField::constant(d, speed);
        let v = ScalarField::zeros(d);
        let mut q = blob.clone();
        for _ in 0..steps {
            q = advect_with(&q, &u, &v, dt, Backtrace::Midpoint).unwrap();
        }
        let (x0, y0) = d.coords(blob.argmax());
        let (x1, y1) = d.coords(q.argmax());
        let shift = d.cell_center(x1, y1).x - d.cell_center(x0, y0).x;
        assert!((shift - speed * dt * steps as f64).abs() < d.dx(), "{shift}");
        assert_eq!(y0, y1);
    }

    #[test]
    fn advect_rejects_mismatched_grids() {
        let a = ScalarField::zeros(Domain::unit(4, 4).unwrap());
        let b = ScalarField::zeros(Domain::unit(5, 4).unwrap());
        assert!(advect(&a, &b, &b, 0.1).is_err());
    }

    #[test]
    fn projection_trivial_cases() {
        let d = Domain::unit(16, 16).unwrap();
        let zero = ScalarField::zeros(d);
        let (u, v) = project(&zero, &zero, 50).unwrap();
        assert_eq!(u, zero);
        assert_eq!(v, zero);
    }

    #[test]
    fn projection_leaves_divergence_free_fields_alone() {
        // a discrete stream-function field is divergence free under the
        // central operator up to wall terms; a field vanishing near the walls
        // is exactly representable
        let d = Domain::unit(24, 24).unwrap();
        let bump = |p: Point| {
            let r2 = (p.x - 0.5).powi(2) + (p.y - 0.5).powi(2);
            (-r2 / 0.004).exp()
        };
        // u = d psi / dy, v = -d psi / dx with the same central operators
        let psi = ScalarField::from_fn(d, bump);
        let n = d.len();
        let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
        gradient_into(&d, psi.values(), &mut gx, &mut gy);
        let u = ScalarField::new(d, gy.clone()).unwrap();
        let v = ScalarField::new(d, gx.iter().map(|g| -g).collect()).unwrap();
        let div0 = max_abs_divergence(&u, &v).unwrap();
        assert!(div0 < 1e-10, "{div0}");
        let (u2, v2) = project(&u, &v, 100).unwrap();
        for (a, b) in u.values().iter().zip(u2.values()).chain(v.values().iter().zip(v2.values())) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_reduces_random_divergence() {
        let d = Domain::unit(32, 32).unwrap();
        let (u, v) = random_velocity(d, 11);
        let before = max_abs_divergence(&u, &v).unwrap();
        let (pu, pv) = project(&u, &v, 200).unwrap();
        let after = max_abs_divergence(&pu, &pv).unwrap();
        assert!(before / after >= 100.0, "{before} -> {after}");
    }

    #[test]
    fn projection_improves_with_iterations() {
        let d = Domain::unit(32, 32).unwrap();
        let (u, v) = random_velocity(d, 5);
        let mut last = max_abs_divergence(&u, &v).unwrap();
        for iters in [5, 10, 20, 40, 80] {
            let (pu, pv) = project(&u, &v, iters).unwrap();
            let now = max_abs_divergence(&pu, &pv).unwrap();
            assert!(now <= last, "{iters}: {now} > {last}");
            last = now;
        }
    }

    #[test]
    fn jacobi_solver_also_reduces_divergence() {
        let d = Domain::unit(16, 16).unwrap();
        let (u, v) = random_velocity(d, 9);
        let before = max_abs_divergence(&u, &v).unwrap();
        let settings = ProjectionSettings {
            solver: PressureSolver::Jacobi,
            iters: 200,
            tol: 0.0,
        };
        let (pu, pv) = project_with(&u, &v, &settings).unwrap();
        let after = max_abs_divergence(&pu, &pv).unwrap();
        assert!(after < 0.5 * before, "{before} -> {after}");
    }

    #[test]
    fn visibility_anchor_points() {
        let d = Domain::unit(2, 2).unwrap();
        let c = 4.0;
        let rho = ScalarField::new(d, vec![0.0, c, 2.0 * c, c / 2.0]).unwrap();
        let m = visibility(&rho, c).unwrap();
        assert_eq!(m.values(), &[1.0, 0.0, 0.0, 0.5]);
        assert!(visibility(&rho, 0.0).is_err());
        assert!(visibility(&rho, -1.0).is_err());
    }

    #[test]
    fn sequence_without_source_is_empty_smoke() {
        let d = Domain::unit(16, 16).unwrap();
        let frames = generate_smoke_sequence(&SmokeParams::without_source(), d, 1, 0).unwrap();
        assert_eq!(frames.len(), 1);
        assert!(frames[0].values().iter().all(|&r| r == 0.0));
        assert!(generate_smoke_sequence(&SmokeParams::default(), d, 0, 0).is_err());
    }

    #[test]
    fn sequence_is_deterministic() {
        let d = Domain::unit(16, 16).unwrap();
        let params = SmokeParams {
            random_source: true,
            ..SmokeParams::default()
        };
        let a = generate_smoke_sequence(&params, d, 20, 42).unwrap();
        let b = generate_smoke_sequence(&params, d, 20, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_smoke_sequence(&params, d, 20, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn centered_plume_rises_and_keeps_its_mass() {
        let d = Domain::unit(64, 64).unwrap();
        let center = Point::new(0.5, 0.5);
        let params = SmokeParams {
            source_center: Some(center),
            ..SmokeParams::default()
        };
        let per_step = {
            let mut probe = FluidState::quiescent(d, 0.0);
            inject_source(&mut probe, center, &params)
        };
        let mut s = FluidState::quiescent(d, params.ambient_temperature);
        for step in 0..200 {
            s = step_fluid(&s, &params, Some(center), step).unwrap();
        }
        let mass = s.density.total_mass();
        let ratio = mass / (200.0 * per_step);
        assert!((ratio - 1.0).abs() < 0.05, "mass ratio {ratio}");
        let cy: f64 = s
            .density
            .values()
            .iter()
            .enumerate()
            .map(|(k, r)| r * d.cell_center(k % 64, k / 64).y)
            .sum::<f64>()
            * d.cell_area()
            / mass;
        assert!(cy > 0.55, "centroid {cy}");
        let occupied = s.density.values().iter().filter(|&&r| r > 1e-3).count();
        let source_cells = (std::f64::consts::PI * 0.01 / d.cell_area()) as usize;
        assert!(occupied > 3 * source_cells);
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = SmokeParams { dt: 0.0, ..SmokeParams::default() };
        assert!(bad.validate().is_err());
        let bad = SmokeParams { projection_iters: 0, ..SmokeParams::default() };
        assert!(bad.validate().is_err());
        let bad = SmokeParams { cutoff_density: 0.0, ..SmokeParams::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn blow_up_is_reported_with_step() {
        let d = Domain::unit(8, 8).unwrap();
        let params = SmokeParams::without_source();
        let mut s = FluidState::quiescent(d, 0.0);
        s.temperature.values_mut()[5] = f64::MAX;
        s.velocity_v.values_mut()[5] = f64::MAX;
        match step_fluid(&s, &params, None, 17) {
            Err(Error::NonFinite { step, .. }) => assert_eq!(step, 17),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }
}
