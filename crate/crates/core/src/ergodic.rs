//! Cosine spectral basis, ergodic metric and the multi-agent trajectory
//! optimizer.
//!
//! Agents are single integrators, `x[t+1] = x[t] + u[t] * dt`, with every
//! control component bounded by `u_max`. The optimizer minimizes
//!
//! ```text
//! J(u) = sum_k lambda_k (c_k - phi_k)^2 + sum_t R |u_t|^2 + w * dist(x_t, S)^2
//! ```
//!
//! by projected gradient descent. The gradient comes from a backward adjoint
//! sweep through the dynamics and every accepted step passes an Armijo test,
//! so the recorded cost trace never increases.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Domain, Point, ScalarField};

/// Which form of the per-mode weight to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightForm {
    /// `(1 + |k|^2)^(-3/2)`.
    #[default]
    Sobolev,
    /// `1 / (1 + |k|^(3/2))`.
    Printed,
}

impl WeightForm {
    fn weight(self, k0: usize, k1: usize) -> f64 {
        let norm_sq = (k0 * k0 + k1 * k1) as f64;
        match self {
            WeightForm::Sobolev => (1.0 + norm_sq).powf(-1.5),
            WeightForm::Printed => 1.0 / (1.0 + norm_sq.sqrt().powf(1.5)),
        }
    }
}

/// Modes `k = (k0, k1)` with `k0, k1 < K`, flattened as `k0 * K + k1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    domain: Domain,
    modes: usize,
    norms: Vec<f64>,
    weights: Vec<f64>,
    // cos(k pi x / L) at cell centers, indexed [k][i]
    cos_x: Vec<Vec<f64>>,
    cos_y: Vec<Vec<f64>>,
}

impl SpectralBasis {
    pub fn new(domain: Domain, modes: usize, form: WeightForm) -> Result<Self> {
        if modes == 0 {
            return Err(Error::param("modes", "must be at least 1"));
        }
        if modes > domain.nx().min(domain.ny()) {
            return Err(Error::param(
                "modes",
                format!("{modes} modes cannot be resolved on a {}x{} grid", domain.nx(), domain.ny()),
            ));
        }
        let [l0, l1] = domain.extents();
        let mut norms = Vec::with_capacity(modes * modes);
        let mut weights = Vec::with_capacity(modes * modes);
        for k0 in 0..modes {
            for k1 in 0..modes {
                let half = |k: usize| if k == 0 { 1.0 } else { 0.5 };
                norms.push((l0 * l1 * half(k0) * half(k1)).sqrt());
                weights.push(form.weight(k0, k1));
            }
        }
        let table = |n: usize, len: f64, h: f64| -> Vec<Vec<f64>> {
            (0..modes)
                .map(|k| {
                    (0..n)
                        .map(|i| (k as f64 * PI * (i as f64 + 0.5) * h / len).cos())
                        .collect()
                })
                .collect()
        };
        Ok(Self {
            cos_x: table(domain.nx(), l0, domain.dx()),
            cos_y: table(domain.ny(), l1, domain.dy()),
            domain,
            modes,
            norms,
            weights,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Modes per dimension, `K`.
    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn len(&self) -> usize {
        self.modes * self.modes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mode(&self, flat: usize) -> (usize, usize) {
        (flat / self.modes, flat % self.modes)
    }

    /// `h_k`, the L2 norm of the unnormalized cosine product.
    pub fn norm(&self, flat: usize) -> f64 {
        self.norms[flat]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `F_k` evaluated at `point`.
    pub fn eval(&self, k: (usize, usize), point: Point) -> f64 {
        let [l0, l1] = self.domain.extents();
        let (k0, k1) = k;
        (k0 as f64 * PI * point.x / l0).cos() * (k1 as f64 * PI * point.y / l1).cos()
            / self.norms[k0 * self.modes + k1]
    }

    /// `F_k` sampled at every cell center.
    pub fn mode_field(&self, flat: usize) -> ScalarField {
        let (k0, k1) = self.mode(flat);
        let h = self.norms[flat];
        let d = self.domain;
        let values = (0..d.ny())
            .flat_map(|j| (0..d.nx()).map(move |i| (i, j)))
            .map(|(i, j)| self.cos_x[k0][i] * self.cos_y[k1][j] / h)
            .collect();
        ScalarField::from_raw(d, values)
    }

    /// Coefficients of `field` by midpoint quadrature, without normalization.
    pub fn project(&self, field: &ScalarField) -> Result<Vec<f64>> {
        if *field.domain() != self.domain {
            return Err(Error::DomainMismatch);
        }
        let d = self.domain;
        let (nx, ny, kk) = (d.nx(), d.ny(), self.modes);
        // separable sum: first along x for every row, then along y
        let mut rows = vec![0.0; ny * kk];
        for j in 0..ny {
            let row = &field.values()[j * nx..(j + 1) * nx];
            for k0 in 0..kk {
                rows[j * kk + k0] = row.iter().zip(&self.cos_x[k0]).map(|(f, c)| f * c).sum();
            }
        }
        let area = d.cell_area();
        let mut out = vec![0.0; kk * kk];
        for k0 in 0..kk {
            for k1 in 0..kk {
                let s: f64 = (0..ny).map(|j| rows[j * kk + k0] * self.cos_y[k1][j]).sum();
                out[k0 * kk + k1] = s * area / self.norms[k0 * kk + k1];
            }
        }
        Ok(out)
    }

    /// `sum_k coeffs[k] F_k` on the grid.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<ScalarField> {
        self.check_len(coeffs)?;
        let d = self.domain;
        let kk = self.modes;
        let mut values = Vec::with_capacity(d.len());
        for j in 0..d.ny() {
            for i in 0..d.nx() {
                let mut s = 0.0;
                for k0 in 0..kk {
                    for k1 in 0..kk {
                        let f = k0 * kk + k1;
                        s += coeffs[f] * self.cos_x[k0][i] * self.cos_y[k1][j] / self.norms[f];
                    }
                }
                values.push(s);
            }
        }
        Ok(ScalarField::from_raw(d, values))
    }

    fn check_len(&self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() == self.len() {
            Ok(())
        } else {
            Err(Error::param(
                "coefficients",
                format!("expected {} modes, got {}", self.len(), coeffs.len()),
            ))
        }
    }

    /// Per-point cosine and sine tables used by the coefficient and gradient
    /// sums.
    fn trig(&self, p: Point) -> Trig {
        let [l0, l1] = self.domain.extents();
        let mut t = Trig {
            cx: Vec::with_capacity(self.modes),
            sx: Vec::with_capacity(self.modes),
            cy: Vec::with_capacity(self.modes),
            sy: Vec::with_capacity(self.modes),
        };
        for k in 0..self.modes {
            let (s, c) = (k as f64 * PI * p.x / l0).sin_cos();
            t.sx.push(s);
            t.cx.push(c);
            let (s, c) = (k as f64 * PI * p.y / l1).sin_cos();
            t.sy.push(s);
            t.cy.push(c);
        }
        t
    }
}

struct Trig {
    cx: Vec<f64>,
    sx: Vec<f64>,
    cy: Vec<f64>,
    sy: Vec<f64>,
}

/// `F_k(point)`; see [`SpectralBasis::eval`].
pub fn basis_eval(basis: &SpectralBasis, k: (usize, usize), point: Point) -> Result<f64> {
    basis.domain.check_contains(point)?;
    if k.0 >= basis.modes || k.1 >= basis.modes {
        return Err(Error::param("k", format!("mode {k:?} outside 0..{}", basis.modes)));
    }
    Ok(basis.eval(k, point))
}

/// `phi` scaled to unit mass. An all-zero (or non-positive) field becomes the
/// uniform distribution; the flag reports when that happened.
pub fn normalize_distribution(phi: &ScalarField) -> (ScalarField, bool) {
    let d = *phi.domain();
    let clipped = phi.map(|x| if x.is_finite() { x.max(0.0) } else { 0.0 });
    let mass = clipped.total_mass();
    if mass > 0.0 && mass.is_finite() {
        (clipped.scaled(1.0 / mass), false)
    } else {
        let area = d.extents()[0] * d.extents()[1];
        (ScalarField::constant(d, 1.0 / area), true)
    }
}

/// Target coefficients of `phi` after normalizing it to unit mass.
pub fn distribution_coefficients(basis: &SpectralBasis, phi: &ScalarField) -> Result<Vec<f64>> {
    let (normalized, _) = normalize_distribution(phi);
    basis.project(&normalized)
}

/// Joint time average `1/(N T) sum_agents sum_t F_k(x_t)`.
pub fn trajectory_coefficients(basis: &SpectralBasis, bundle: &TrajectoryBundle) -> Vec<f64> {
    coefficients_of(basis, &bundle.states)
}

fn coefficients_of(basis: &SpectralBasis, states: &[Vec<Point>]) -> Vec<f64> {
    let kk = basis.modes;
    let mut c = vec![0.0; kk * kk];
    let mut count = 0usize;
    for path in states {
        for &p in path {
            let t = basis.trig(p);
            for k0 in 0..kk {
                for k1 in 0..kk {
                    c[k0 * kk + k1] += t.cx[k0] * t.cy[k1];
                }
            }
            count += 1;
        }
    }
    for (f, v) in c.iter_mut().enumerate() {
        *v /= count as f64 * basis.norms[f];
    }
    c
}

/// `sum_k lambda_k (c_k - phi_k)^2`.
pub fn ergodic_metric(basis: &SpectralBasis, c: &[f64], phi: &[f64]) -> Result<f64> {
    basis.check_len(c)?;
    basis.check_len(phi)?;
    Ok(basis
        .weights
        .iter()
        .zip(c.iter().zip(phi))
        .map(|(w, (a, b))| w * (a - b) * (a - b))
        .sum())
}

/// States and controls of every agent over one planning horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBundle {
    /// `states[agent][t]`, `t` in `0..T`.
    pub states: Vec<Vec<Point>>,
    /// `controls[agent][t]`, `t` in `0..T-1`.
    pub controls: Vec<Vec<[f64; 2]>>,
    pub dt: f64,
    pub u_max: f64,
}

impl TrajectoryBundle {
    /// Roll the dynamics forward from `starts`.
    pub fn from_controls(starts: &[Point], controls: Vec<Vec<[f64; 2]>>, dt: f64, u_max: f64) -> Result<Self> {
        if starts.is_empty() || starts.len() != controls.len() {
            return Err(Error::param("controls", "need one control sequence per agent"));
        }
        let states = starts
            .iter()
            .zip(&controls)
            .map(|(&s, us)| rollout(s, us, dt))
            .collect();
        let bundle = Self { states, controls, dt, u_max };
        bundle.check_bounds()?;
        Ok(bundle)
    }

    /// Every agent holds its start for `horizon` steps.
    pub fn stationary(starts: &[Point], horizon: usize, dt: f64, u_max: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::param("horizon", "must be at least 1"));
        }
        Self::from_controls(starts, vec![vec![[0.0; 2]; horizon - 1]; starts.len()], dt, u_max)
    }

    /// Each agent moves in a straight line toward its goal at full speed and
    /// stops there.
    pub fn straight_line(starts: &[Point], goals: &[Point], horizon: usize, dt: f64, u_max: f64) -> Result<Self> {
        if starts.len() != goals.len() {
            return Err(Error::param("goals", "need one goal per agent"));
        }
        if horizon == 0 {
            return Err(Error::param("horizon", "must be at least 1"));
        }
        let controls = starts
            .iter()
            .zip(goals)
            .map(|(&s, &g)| {
                let mut x = s;
                (0..horizon - 1)
                    .map(|_| {
                        let u = step_toward(x, g, u_max * dt);
                        x = Point::new(x.x + u[0], x.y + u[1]);
                        [u[0] / dt, u[1] / dt]
                    })
                    .collect()
            })
            .collect();
        Self::from_controls(starts, controls, dt, u_max)
    }

    pub fn agent_count(&self) -> usize {
        self.states.len()
    }

    pub fn horizon(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn starts(&self) -> Vec<Point> {
        self.states.iter().map(|s| s[0]).collect()
    }

    /// Checks the dynamics, the control box and that all states lie in `domain`.
    pub fn validate(&self, domain: &Domain) -> Result<()> {
        self.check_bounds()?;
        for (path, us) in self.states.iter().zip(&self.controls) {
            if us.len() + 1 != path.len() {
                return Err(Error::param("controls", "need horizon - 1 controls per agent"));
            }
            for (t, u) in us.iter().enumerate() {
                let want = Point::new(path[t].x + u[0] * self.dt, path[t].y + u[1] * self.dt);
                if want.distance(path[t + 1]) > 1e-9 {
                    return Err(Error::param("states", format!("dynamics violated at t = {t}")));
                }
            }
            for &p in path {
                domain.check_contains(p)?;
            }
        }
        Ok(())
    }

    fn check_bounds(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::param("dt", "must be positive"));
        }
        if !(self.u_max.is_finite() && self.u_max > 0.0) {
            return Err(Error::param("u_max", "must be positive"));
        }
        let slack = 1e-12 * self.u_max;
        let bad = self
            .controls
            .iter()
            .flatten()
            .any(|u| !(u[0].abs() <= self.u_max + slack && u[1].abs() <= self.u_max + slack));
        if bad {
            return Err(Error::param("controls", format!("exceed u_max = {}", self.u_max)));
        }
        let len = self.horizon();
        if self.states.iter().any(|s| s.len() != len || len == 0) {
            return Err(Error::param("states", "all agents need the same nonzero horizon"));
        }
        Ok(())
    }

    /// The plan that remains after `executed` steps, padded with zero controls
    /// back to the full horizon.
    pub fn warm_start(&self, executed: usize) -> Result<Self> {
        let horizon = self.horizon();
        let skip = executed.min(horizon - 1);
        let starts: Vec<Point> = self.states.iter().map(|s| s[skip]).collect();
        let controls = self
            .controls
            .iter()
            .map(|us| {
                let mut rest: Vec<[f64; 2]> = us[skip.min(us.len())..].to_vec();
                rest.resize(horizon - 1, [0.0; 2]);
                rest
            })
            .collect();
        Self::from_controls(&starts, controls, self.dt, self.u_max)
    }
}

fn rollout(start: Point, controls: &[[f64; 2]], dt: f64) -> Vec<Point> {
    let mut out = Vec::with_capacity(controls.len() + 1);
    let mut x = start;
    out.push(x);
    for u in controls {
        x = Point::new(x.x + u[0] * dt, x.y + u[1] * dt);
        out.push(x);
    }
    out
}

/// Displacement of at most `max_step` per axis from `from` toward `to`,
/// keeping the direction.
pub(crate) fn step_toward(from: Point, to: Point, max_step: f64) -> [f64; 2] {
    let (dx, dy) = (to.x - from.x, to.y - from.y);
    let biggest = dx.abs().max(dy.abs());
    if biggest <= max_step {
        [dx, dy]
    } else {
        let s = max_step / biggest;
        [dx * s, dy * s]
    }
}

/// Tunables of the descent loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub max_iters: usize,
    /// Relative decrease of J over [`STALL_WINDOW`] iterations below which the
    /// optimizer stops.
    pub tol: f64,
    /// Weight of the squared distance outside the workspace.
    pub boundary_weight: f64,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    pub max_backtracks: usize,
}

pub const STALL_WINDOW: usize = 5;

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-3,
            boundary_weight: 100.0,
            armijo: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicProblem {
    pub basis: SpectralBasis,
    pub target: Vec<f64>,
    /// `R`, a scalar multiple of the identity.
    pub control_weight: f64,
    pub initial_states: Vec<Point>,
    /// True when the supplied distribution had no mass and the uniform one
    /// was used instead.
    pub uniform_fallback: bool,
}

impl ErgodicProblem {
    pub fn new(basis: SpectralBasis, phi: &ScalarField, control_weight: f64, initial_states: Vec<Point>) -> Result<Self> {
        if !(control_weight.is_finite() && control_weight >= 0.0) {
            return Err(Error::param("control_weight", "must be nonnegative"));
        }
        if initial_states.is_empty() {
            return Err(Error::param("initial_states", "need at least one agent"));
        }
        let (normalized, uniform_fallback) = normalize_distribution(phi);
        let target = basis.project(&normalized)?;
        Ok(Self {
            basis,
            target,
            control_weight,
            initial_states,
            uniform_fallback,
        })
    }

    /// Total cost of a bundle, including the boundary penalty.
    pub fn cost(&self, bundle: &TrajectoryBundle, boundary_weight: f64) -> f64 {
        self.cost_of(&bundle.states, &bundle.controls, boundary_weight)
    }

    fn cost_of(&self, states: &[Vec<Point>], controls: &[Vec<[f64; 2]>], boundary_weight: f64) -> f64 {
        let c = coefficients_of(&self.basis, states);
        let metric: f64 = self
            .basis
            .weights
            .iter()
            .zip(c.iter().zip(&self.target))
            .map(|(w, (a, b))| w * (a - b) * (a - b))
            .sum();
        let effort: f64 = controls.iter().flatten().map(|u| u[0] * u[0] + u[1] * u[1]).sum();
        let [l0, l1] = self.basis.domain.extents();
        let outside: f64 = states
            .iter()
            .flatten()
            .map(|p| excess(p.x, l0).powi(2) + excess(p.y, l1).powi(2))
            .sum();
        metric + self.control_weight * effort + boundary_weight * outside
    }

    /// Gradient of the cost with respect to every control, by an adjoint
    /// sweep backward through the dynamics.
    pub fn gradient(&self, bundle: &TrajectoryBundle, boundary_weight: f64) -> Vec<Vec<[f64; 2]>> {
        let basis = &self.basis;
        let kk = basis.modes;
        let [l0, l1] = basis.domain.extents();
        let count: usize = bundle.states.iter().map(Vec::len).sum();
        let c = coefficients_of(basis, &bundle.states);
        // dJ/dc_k, folded with 1/h_k and the 1/(N T) averaging
        let scale: Vec<f64> = (0..kk * kk)
            .map(|f| 2.0 * basis.weights[f] * (c[f] - self.target[f]) / (count as f64 * basis.norms[f]))
            .collect();
        let (wx, wy) = (PI / l0, PI / l1);

        bundle
            .states
            .iter()
            .zip(&bundle.controls)
            .map(|(path, us)| {
                let dj_dx: Vec<[f64; 2]> = path
                    .iter()
                    .map(|&p| {
                        let t = basis.trig(p);
                        let (mut gx, mut gy) = (0.0, 0.0);
                        for k0 in 0..kk {
                            for k1 in 0..kk {
                                let s = scale[k0 * kk + k1];
                                gx -= s * k0 as f64 * wx * t.sx[k0] * t.cy[k1];
                                gy -= s * k1 as f64 * wy * t.cx[k0] * t.sy[k1];
                            }
                        }
                        gx += 2.0 * boundary_weight * excess(p.x, l0);
                        gy += 2.0 * boundary_weight * excess(p.y, l1);
                        [gx, gy]
                    })
                    .collect();
                // rho_t = dJ/dx_t + rho_{t+1};  dJ/du_t = dt rho_{t+1} + 2 R u_t
                let mut grad = vec![[0.0; 2]; us.len()];
                let mut rho = [0.0; 2];
                for t in (0..us.len()).rev() {
                    rho[0] += dj_dx[t + 1][0];
                    rho[1] += dj_dx[t + 1][1];
                    grad[t] = [
                        bundle.dt * rho[0] + 2.0 * self.control_weight * us[t][0],
                        bundle.dt * rho[1] + 2.0 * self.control_weight * us[t][1],
                    ];
                }
                grad
            })
            .collect()
    }
}

/// Signed distance past the interval `[0, len]`, zero inside.
fn excess(x: f64, len: f64) -> f64 {
    if x < 0.0 {
        x
    } else if x > len {
        x - len
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub bundle: TrajectoryBundle,
    pub iterations: usize,
    /// Cost of the starting bundle followed by the cost of every accepted
    /// iterate.
    pub trace: Vec<f64>,
}

/// Projected gradient descent with backtracking, followed by a clamp of every
/// state into the workspace.
pub fn optimize(
    problem: &ErgodicProblem,
    initial: &TrajectoryBundle,
    settings: &OptimizerSettings,
) -> Result<OptimizeOutcome> {
    if initial.agent_count() != problem.initial_states.len() {
        return Err(Error::param("initial", "agent count differs from the problem"));
    }
    initial.check_bounds()?;
    let w = settings.boundary_weight;
    let (dt, u_max) = (initial.dt, initial.u_max);
    let starts = initial.starts();

    let mut controls = initial.controls.clone();
    let mut states = initial.states.clone();
    let mut cost = problem.cost_of(&states, &controls, w);
    if !cost.is_finite() {
        return Err(Error::NoDescent(format!("initial cost is {cost}")));
    }
    let mut trace = vec![cost];
    let mut step = u_max;
    let mut iterations = 0;

    while iterations < settings.max_iters {
        let current = TrajectoryBundle { states, controls, dt, u_max };
        let grad = problem.gradient(&current, w);
        if grad.iter().flatten().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NoDescent(format!("non-finite gradient at iteration {iterations}")));
        }
        let TrajectoryBundle { states: cur_states, controls: cur_controls, .. } = current;

        let mut accepted = None;
        let mut s = step * 2.0;
        for _ in 0..settings.max_backtracks {
            let trial: Vec<Vec<[f64; 2]>> = cur_controls
                .iter()
                .zip(&grad)
                .map(|(us, gs)| {
                    us.iter()
                        .zip(gs)
                        .map(|(u, g)| {
                            [
                                (u[0] - s * g[0]).clamp(-u_max, u_max),
                                (u[1] - s * g[1]).clamp(-u_max, u_max),
                            ]
                        })
                        .collect()
                })
                .collect();
            // directional derivative along the projected step
            let decrease: f64 = trial
                .iter()
                .flatten()
                .zip(cur_controls.iter().flatten())
                .zip(grad.iter().flatten())
                .map(|((a, b), g)| g[0] * (a[0] - b[0]) + g[1] * (a[1] - b[1]))
                .sum();
            if decrease >= 0.0 {
                // projected gradient vanishes: stationary on the box
                break;
            }
            let trial_states: Vec<Vec<Point>> = starts
                .iter()
                .zip(&trial)
                .map(|(&x0, us)| rollout(x0, us, dt))
                .collect();
            let trial_cost = problem.cost_of(&trial_states, &trial, w);
            if trial_cost.is_finite() && trial_cost <= cost + settings.armijo * decrease {
                accepted = Some((trial, trial_states, trial_cost));
                break;
            }
            s *= 0.5;
        }

        let Some((next_controls, next_states, next_cost)) = accepted else {
            states = cur_states;
            break;
        };
        iterations += 1;
        step = s;
        controls = next_controls;
        states = next_states;
        cost = next_cost;
        trace.push(cost);

        if trace.len() > STALL_WINDOW {
            let old = trace[trace.len() - 1 - STALL_WINDOW];
            let rel = (old - cost) / old.abs().max(f64::MIN_POSITIVE);
            if rel < settings.tol {
                break;
            }
        }
    }

    let bundle = clamp_to_domain(problem.basis.domain(), &states, dt, u_max);
    Ok(OptimizeOutcome { bundle, iterations, trace })
}

/// Clamp every state into the domain and recompute the controls from the
/// clamped positions. Clamping is 1-Lipschitz per axis, so the control bound
/// survives.
fn clamp_to_domain(domain: &Domain, states: &[Vec<Point>], dt: f64, u_max: f64) -> TrajectoryBundle {
    let states: Vec<Vec<Point>> = states
        .iter()
        .map(|path| path.iter().map(|&p| domain.clamp(p)).collect())
        .collect();
    let controls = states
        .iter()
        .map(|path| {
            path.windows(2)
                .map(|w| {
                    let u = [(w[1].x - w[0].x) / dt, (w[1].y - w[0].y) / dt];
                    [u[0].clamp(-u_max, u_max), u[1].clamp(-u_max, u_max)]
                })
                .collect()
        })
        .collect();
    TrajectoryBundle { states, controls, dt, u_max }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GaussianPeak;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_basis(n: usize, k: usize) -> SpectralBasis {
        SpectralBasis::new(Domain::unit(n, n).unwrap(), k, WeightForm::Sobolev).unwrap()
    }

    #[test]
    fn eval_examples() {
        let b = SpectralBasis::new(Domain::new(2.0, 1.0, 16, 8).unwrap(), 4, WeightForm::Sobolev).unwrap();
        let p = Point::new(0.3, 0.7);
        assert_eq!(basis_eval(&b, (0, 0), p).unwrap(), 1.0 / b.norm(0));
        let origin = Point::new(0.0, 0.0);
        for f in 0..b.len() {
            assert!((basis_eval(&b, b.mode(f), origin).unwrap() - 1.0 / b.norm(f)).abs() < 1e-15);
        }
        let v = basis_eval(&b, (1, 0), Point::new(2.0, 0.4)).unwrap();
        assert!((v + 1.0 / b.norm(4)).abs() < 1e-15);
        assert!(basis_eval(&b, (4, 0), p).is_err());
        assert!(basis_eval(&b, (0, 0), Point::new(3.0, 0.0)).is_err());
    }

    #[test]
    fn weights_decrease_with_mode_norm() {
        for form in [WeightForm::Sobolev, WeightForm::Printed] {
            let b = SpectralBasis::new(Domain::unit(16, 16).unwrap(), 8, form).unwrap();
            let mut by_norm: Vec<(usize, f64)> = (0..b.len())
                .map(|f| {
                    let (a, c) = b.mode(f);
                    (a * a + c * c, b.weights()[f])
                })
                .collect();
            by_norm.sort_by_key(|x| x.0);
            assert!(by_norm.windows(2).all(|w| w[1].1 <= w[0].1 && w[1].1 > 0.0));
        }
    }

    #[test]
    fn gram_matrix_is_identity() {
        let b = unit_basis(64, 8);
        let fields: Vec<ScalarField> = (0..b.len()).map(|f| b.mode_field(f)).collect();
        let area = b.domain().cell_area();
        for (i, fi) in fields.iter().enumerate() {
            for (j, fj) in fields.iter().enumerate() {
                let g: f64 = fi.values().iter().zip(fj.values()).map(|(a, c)| a * c).sum::<f64>() * area;
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-6, "({i}, {j}) = {g}");
            }
        }
    }

    #[test]
    fn uniform_distribution_has_only_the_mean_mode() {
        let b = unit_basis(32, 8);
        let phi = ScalarField::constant(*b.domain(), 3.0);
        let c = distribution_coefficients(&b, &phi).unwrap();
        assert!((c[0] - 1.0 / b.norm(0)).abs() < 1e-10);
        assert!(c[1..].iter().all(|x| x.abs() < 1e-10));
        // an empty map falls back to the same thing
        let zero = ScalarField::zeros(*b.domain());
        assert_eq!(distribution_coefficients(&b, &zero).unwrap(), c);
    }

    #[test]
    fn impulse_sifts_the_basis() {
        let b = unit_basis(32, 6);
        let d = *b.domain();
        let mut phi = ScalarField::zeros(d);
        let cell = d.index(7, 20);
        phi.values_mut()[cell] = 1.0;
        let c = distribution_coefficients(&b, &phi).unwrap();
        let p = d.cell_center(7, 20);
        for (f, ck) in c.iter().enumerate() {
            assert!((ck - b.eval(b.mode(f), p)).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruction_improves_with_more_modes() {
        let d = Domain::unit(64, 64).unwrap();
        let phi = GaussianPeak::new(Point::new(0.3, 0.65), 1.0, 0.08).rasterize(d).unwrap();
        let (phi, _) = normalize_distribution(&phi);
        let err = |k: usize| {
            let b = SpectralBasis::new(d, k, WeightForm::Sobolev).unwrap();
            let r = b.reconstruct(&b.project(&phi).unwrap()).unwrap();
            r.values().iter().zip(phi.values()).map(|(a, c)| (a - c).powi(2)).sum::<f64>()
        };
        assert!(err(16) < err(8));
    }

    #[test]
    fn trajectory_coefficient_examples() {
        let b = unit_basis(16, 5);
        let p = Point::new(0.2, 0.9);
        let still = TrajectoryBundle::stationary(&[p, p, p], 10, 0.1, 1.0).unwrap();
        let c = trajectory_coefficients(&b, &still);
        for (f, ck) in c.iter().enumerate() {
            assert!((ck - b.eval(b.mode(f), p)).abs() < 1e-12);
        }
        let q = Point::new(0.7, 0.4);
        let two = TrajectoryBundle::from_controls(&[p], vec![vec![[5.0, -5.0]]], 0.1, 5.0).unwrap();
        assert!(two.states[0][1].distance(q) < 1e-12);
        let c = trajectory_coefficients(&b, &two);
        for (f, ck) in c.iter().enumerate() {
            let want = (b.eval(b.mode(f), p) + b.eval(b.mode(f), two.states[0][1])) / 2.0;
            assert!((ck - want).abs() < 1e-12);
        }
    }

    fn random_bundle(rng: &mut ChaCha8Rng, agents: usize, horizon: usize, u_max: f64) -> TrajectoryBundle {
        let starts: Vec<Point> = (0..agents)
            .map(|_| Point::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)))
            .collect();
        let controls = (0..agents)
            .map(|_| {
                (0..horizon - 1)
                    .map(|_| [rng.random_range(-u_max..u_max), rng.random_range(-u_max..u_max)])
                    .collect()
            })
            .collect();
        TrajectoryBundle::from_controls(&starts, controls, 0.1, u_max).unwrap()
    }

    #[test]
    fn trajectory_coefficients_match_double_loop() {
        let b = unit_basis(16, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bundle = random_bundle(&mut rng, 3, 20, 0.3);
        let c = trajectory_coefficients(&b, &bundle);
        for (f, ck) in c.iter().enumerate() {
            let (k0, k1) = b.mode(f);
            let mut s = 0.0;
            for path in &bundle.states {
                for p in path {
                    s += (k0 as f64 * PI * p.x).cos() * (k1 as f64 * PI * p.y).cos() / b.norm(f);
                }
            }
            assert!((ck - s / 60.0).abs() < 1e-12);
        }
    }

    #[test]
    fn metric_examples() {
        let b = unit_basis(8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi: Vec<f64> = (0..b.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(ergodic_metric(&b, &phi, &phi).unwrap(), 0.0);
        let mut c = phi.clone();
        c[5] += 0.25;
        let m = ergodic_metric(&b, &c, &phi).unwrap();
        assert!((m - b.weights()[5] * 0.0625).abs() < 1e-15);
        let c: Vec<f64> = (0..b.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let direct: f64 = (0..b.len()).map(|f| b.weights()[f] * (c[f] - phi[f]).powi(2)).sum();
        assert!((ergodic_metric(&b, &c, &phi).unwrap() - direct).abs() < 1e-14);
        assert!(ergodic_metric(&b, &c[1..], &phi).is_err());
    }

    fn left_heavy(d: Domain) -> ScalarField {
        ScalarField::from_fn(d, |p| if p.x < 0.5 { 1.0 } else { 0.05 })
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = Domain::unit(16, 16).unwrap();
        let b = SpectralBasis::new(d, 4, WeightForm::Sobolev).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let bundle = random_bundle(&mut rng, 1, 8, 0.5);
        let problem = ErgodicProblem::new(b, &left_heavy(d), 0.01, bundle.starts()).unwrap();
        let w = 100.0;
        let grad = problem.gradient(&bundle, w);
        let h = 1e-6;
        for t in 0..7 {
            for axis in 0..2 {
                let mut plus = bundle.controls.clone();
                let mut minus = bundle.controls.clone();
                plus[0][t][axis] += h;
                minus[0][t][axis] -= h;
                let jp = problem.cost_of(&[rollout(bundle.states[0][0], &plus[0], 0.1)], &plus, w);
                let jm = problem.cost_of(&[rollout(bundle.states[0][0], &minus[0], 0.1)], &minus, w);
                let fd = (jp - jm) / (2.0 * h);
                let g = grad[0][t][axis];
                assert!((g - fd).abs() <= 1e-5 * g.abs().max(1e-3), "t={t} axis={axis}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn optimizer_improves_uniform_coverage() {
        let d = Domain::unit(32, 32).unwrap();
        let b = SpectralBasis::new(d, 8, WeightForm::Sobolev).unwrap();
        let center = Point::new(0.5, 0.5);
        let problem = ErgodicProblem::new(b.clone(), &ScalarField::constant(d, 1.0), 0.01, vec![center]).unwrap();
        let init = TrajectoryBundle::straight_line(&[center], &[Point::new(0.9, 0.5)], 64, 0.1, 1.0).unwrap();
        let out = optimize(&problem, &init, &OptimizerSettings::default()).unwrap();
        out.bundle.validate(&d).unwrap();
        let before = ergodic_metric(&b, &trajectory_coefficients(&b, &init), &problem.target).unwrap();
        let after = ergodic_metric(&b, &trajectory_coefficients(&b, &out.bundle), &problem.target).unwrap();
        assert!(after < before, "{before} -> {after}");
        assert!(out.iterations > 0);
    }

    #[test]
    fn optimizer_favors_the_heavy_half() {
        let d = Domain::unit(32, 32).unwrap();
        let b = SpectralBasis::new(d, 8, WeightForm::Sobolev).unwrap();
        let phi = ScalarField::from_fn(d, |p| if p.x < 0.5 { 1.0 } else { 0.0 });
        let starts = vec![Point::new(0.5, 0.3), Point::new(0.5, 0.7)];
        let problem = ErgodicProblem::new(b, &phi, 0.01, starts.clone()).unwrap();
        let init = TrajectoryBundle::stationary(&starts, 64, 0.1, 1.0).unwrap();
        let out = optimize(&problem, &init, &OptimizerSettings::default()).unwrap();
        let points: Vec<&Point> = out.bundle.states.iter().flatten().collect();
        let left = points.iter().filter(|p| p.x < 0.5).count();
        assert!(left as f64 >= 0.6 * points.len() as f64, "{left} of {}", points.len());
    }

    #[test]
    fn warm_start_keeps_the_remaining_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bundle = random_bundle(&mut rng, 2, 10, 0.4);
        let warm = bundle.warm_start(4).unwrap();
        assert_eq!(warm.horizon(), 10);
        for a in 0..2 {
            assert_eq!(warm.states[a][0], bundle.states[a][4]);
            assert_eq!(&warm.controls[a][..5], &bundle.controls[a][4..]);
            assert!(warm.controls[a][5..].iter().all(|u| *u == [0.0, 0.0]));
        }
    }

    #[test]
    fn zero_mass_target_falls_back_to_uniform() {
        let d = Domain::unit(16, 16).unwrap();
        let b = SpectralBasis::new(d, 4, WeightForm::Sobolev).unwrap();
        let p = ErgodicProblem::new(b, &ScalarField::zeros(d), 0.01, vec![Point::new(0.5, 0.5)]).unwrap();
        assert!(p.uniform_fallback);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]

        #[test]
        fn trace_never_increases(seed in 0u64..10_000, agents in 1usize..4) {
            let d = Domain::unit(24, 24).unwrap();
            let b = SpectralBasis::new(d, 6, WeightForm::Sobolev).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = GaussianPeak::new(
                Point::new(rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)), 1.0, 0.15,
            ).rasterize(d).unwrap();
            let init = random_bundle(&mut rng, agents, 32, 0.5);
            let problem = ErgodicProblem::new(b, &phi, 0.01, init.starts()).unwrap();
            let settings = OptimizerSettings { max_iters: 40, ..OptimizerSettings::default() };
            let out = optimize(&problem, &init, &settings).unwrap();
            prop_assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
            prop_assert_eq!(out.trace.len(), out.iterations + 1);
            out.bundle.validate(&d).unwrap();
            // relabeling agents leaves the coefficients alone
            let mut swapped = out.bundle.clone();
            swapped.states.reverse();
            swapped.controls.reverse();
            let c1 = trajectory_coefficients(&problem.basis, &out.bundle);
            let c2 = trajectory_coefficients(&problem.basis, &swapped);
            for (a, c) in c1.iter().zip(&c2) {
                prop_assert!((a - c).abs() < 1e-12);
            }
        }
    }
}
