//! Benchmark fixtures shared by the criterion targets.

use ember_core::smoke::{generate_smoke_sequence, SmokeParams};
use ember_core::{make_uncertainty_map, Domain, GaussianPeak, Point, ScalarField};

pub fn domain() -> Domain {
    Domain::unit(64, 64).expect("valid domain")
}

/// Three peaks of the default amplitude.
pub fn uncertainty() -> ScalarField {
    let peaks = [
        GaussianPeak::new(Point::new(0.3, 0.3), 100.0, 0.08),
        GaussianPeak::new(Point::new(0.7, 0.4), 100.0, 0.06),
        GaussianPeak::new(Point::new(0.5, 0.8), 100.0, 0.1),
    ];
    make_uncertainty_map(domain(), &peaks).expect("valid peaks")
}

/// A developed plume after `steps` solver steps.
pub fn plume(steps: usize) -> ScalarField {
    generate_smoke_sequence(&SmokeParams::default(), domain(), steps, 1)
        .expect("smoke")
        .pop()
        .expect("at least one frame")
}
