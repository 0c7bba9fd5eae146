//! Bounded 2D scalar fields on a cell-centered grid.
//!
//! Every gridded quantity in the crate (uncertainty maps, smoke density,
//! velocity components, information maps) is a [`ScalarField`]. Values live
//! at cell centers, stored row-major with the row index along `y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the exploration space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_sq(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Rectangular exploration space `[0, L0] x [0, L1]` and its grid resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainRepr", into = "DomainRepr")]
pub struct Domain {
    extents: [f64; 2],
    resolution: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct DomainRepr {
    extents: [f64; 2],
    resolution: [usize; 2],
}

impl TryFrom<DomainRepr> for Domain {
    type Error = Error;

    fn try_from(r: DomainRepr) -> Result<Self> {
        Domain::new(r.extents[0], r.extents[1], r.resolution[0], r.resolution[1])
    }
}

impl From<Domain> for DomainRepr {
    fn from(d: Domain) -> Self {
        DomainRepr {
            extents: d.extents,
            resolution: d.resolution,
        }
    }
}

impl Domain {
    pub fn new(l0: f64, l1: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(l0.is_finite() && l0 > 0.0 && l1.is_finite() && l1 > 0.0) {
            return Err(Error::InvalidDomain(format!(
                "extents must be positive and finite, got ({l0}, {l1})"
            )));
        }
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidDomain(format!(
                "resolution must be at least 2x2, got {nx}x{ny}"
            )));
        }
        Ok(Self {
            extents: [l0, l1],
            resolution: [nx, ny],
        })
    }

    /// Unit square at the given resolution.
    pub fn unit(nx: usize, ny: usize) -> Result<Self> {
        Self::new(1.0, 1.0, nx, ny)
    }

    pub fn extents(&self) -> [f64; 2] {
        self.extents
    }

    pub fn nx(&self) -> usize {
        self.resolution[0]
    }

    pub fn ny(&self) -> usize {
        self.resolution[1]
    }

    pub fn len(&self) -> usize {
        self.resolution[0] * self.resolution[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        self.extents[0] / self.resolution[0] as f64
    }

    pub fn dy(&self) -> f64 {
        self.extents[1] / self.resolution[1] as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.resolution[0] + i
    }

    /// Column and row of a flat index.
    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.resolution[0], idx / self.resolution[0])
    }

    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        Point::new((i as f64 + 0.5) * self.dx(), (j as f64 + 0.5) * self.dy())
    }

    pub fn contains(&self, p: Point) -> bool {
        let tol = 1e-12 * self.extents[0].max(self.extents[1]);
        p.x.is_finite()
            && p.y.is_finite()
            && p.x >= -tol
            && p.y >= -tol
            && p.x <= self.extents[0] + tol
            && p.y <= self.extents[1] + tol
    }

    pub fn check_contains(&self, p: Point) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(self.out_of_domain(p))
        }
    }

    pub(crate) fn out_of_domain(&self, p: Point) -> Error {
        Error::OutOfDomain {
            x: p.x,
            y: p.y,
            l0: self.extents[0],
            l1: self.extents[1],
        }
    }

    pub fn clamp(&self, p: Point) -> Point {
        Point::new(
            p.x.clamp(0.0, self.extents[0]),
            p.y.clamp(0.0, self.extents[1]),
        )
    }

    /// Cell containing `p` (after clamping to the domain).
    pub fn cell_of(&self, p: Point) -> (usize, usize) {
        let p = self.clamp(p);
        let i = ((p.x / self.dx()) as usize).min(self.nx() - 1);
        let j = ((p.y / self.dy()) as usize).min(self.ny() - 1);
        (i, j)
    }
}

/// Gridded real values over a [`Domain`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    domain: Domain,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(domain: Domain, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::param(
                "values",
                format!("expected {} values, got {}", domain.len(), values.len()),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(
                "values",
                format!("non-finite value at index {pos}"),
            ));
        }
        Ok(Self { domain, values })
    }

    /// Skips the finiteness check; callers check before handing the field out.
    pub(crate) fn from_raw(domain: Domain, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), domain.len());
        Self { domain, values }
    }

    pub fn zeros(domain: Domain) -> Self {
        Self::constant(domain, 0.0)
    }

    pub fn constant(domain: Domain, value: f64) -> Self {
        Self {
            domain,
            values: vec![value; domain.len()],
        }
    }

    /// Evaluate `f` at every cell center.
    pub fn from_fn(domain: Domain, mut f: impl FnMut(Point) -> f64) -> Self {
        let mut values = Vec::with_capacity(domain.len());
        for j in 0..domain.ny() {
            for i in 0..domain.nx() {
                values.push(f(domain.cell_center(i, j)));
            }
        }
        Self { domain, values }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.domain.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let idx = self.domain.index(i, j);
        self.values[idx] = v;
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Flat index of the largest value; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (idx, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = idx;
            }
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_domain(&self, other: &ScalarField) -> bool {
        self.domain == other.domain
    }

    pub(crate) fn check_same_domain(&self, other: &ScalarField) -> Result<()> {
        if self.same_domain(other) {
            Ok(())
        } else {
            Err(Error::DomainMismatch)
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            domain: self.domain,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        self.check_same_domain(other)?;
        Ok(ScalarField {
            domain: self.domain,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &ScalarField) -> Result<()> {
        self.check_same_domain(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> ScalarField {
        self.map(|v| alpha * v)
    }

    /// Integral of the field under the midpoint rule.
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.domain.cell_area()
    }

    /// Bilinear interpolation between cell centers.
    ///
    /// Queries outside the hull of cell centers clamp to the nearest cell.
    pub fn sample_bilinear(&self, p: Point) -> Result<f64> {
        self.domain.check_contains(p)?;
        Ok(self.sample_clamped(p))
    }

    /// Like [`sample_bilinear`](Self::sample_bilinear) but clamps any point
    /// into the domain instead of rejecting it.
    pub fn sample_clamped(&self, p: Point) -> f64 {
        let d = &self.domain;
        self.sample_grid(p.x / d.dx() - 0.5, p.y / d.dy() - 0.5)
    }

    /// Bilinear sample at fractional grid coordinates, where cell `(i, j)`
    /// sits at `(i, j)`. Coordinates are clamped to the cell-center hull and
    /// integer coordinates reproduce cell values exactly.
    pub fn sample_grid(&self, gx: f64, gy: f64) -> f64 {
        let d = &self.domain;
        let (nx, ny) = (d.nx(), d.ny());
        let snap = |g: f64| {
            let r = g.round();
            if (g - r).abs() < 1e-9 {
                r
            } else {
                g
            }
        };
        let gx = snap(gx).clamp(0.0, (nx - 1) as f64);
        let gy = snap(gy).clamp(0.0, (ny - 1) as f64);
        let i0 = (gx.floor() as usize).min(nx - 2);
        let j0 = (gy.floor() as usize).min(ny - 2);
        let tx = gx - i0 as f64;
        let ty = gy - j0 as f64;
        let v00 = self.values[d.index(i0, j0)];
        let v10 = self.values[d.index(i0 + 1, j0)];
        let v01 = self.values[d.index(i0, j0 + 1)];
        let v11 = self.values[d.index(i0 + 1, j0 + 1)];
        let bottom = (1.0 - tx) * v00 + tx * v10;
        let top = (1.0 - tx) * v01 + tx * v11;
        (1.0 - ty) * bottom + ty * top
    }
}

/// Isotropic Gaussian bump used to seed uncertainty maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPeak {
    pub center: Point,
    pub amplitude: f64,
    pub sigma: f64,
}

impl GaussianPeak {
    pub fn new(center: Point, amplitude: f64, sigma: f64) -> Self {
        Self {
            center,
            amplitude,
            sigma,
        }
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        domain.check_contains(self.center)?;
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::param("sigma", format!("must be positive, got {}", self.sigma)));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::param(
                "amplitude",
                format!("must be nonnegative, got {}", self.amplitude),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn value_at(&self, p: Point) -> f64 {
        self.amplitude * (-p.distance_sq(self.center) / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// This peak alone, rasterized onto `domain`.
    pub fn rasterize(&self, domain: Domain) -> Result<ScalarField> {
        self.validate(&domain)?;
        Ok(ScalarField::from_fn(domain, |p| self.value_at(p)))
    }
}

/// Sum of Gaussian peaks evaluated at every cell center.
pub fn make_uncertainty_map(domain: Domain, peaks: &[GaussianPeak]) -> Result<ScalarField> {
    if peaks.is_empty() {
        return Err(Error::param("peaks", "at least one peak is required"));
    }
    for peak in peaks {
        peak.validate(&domain)?;
    }
    Ok(ScalarField::from_fn(domain, |p| {
        peaks.iter().map(|peak| peak.value_at(p)).sum()
    }))
}
