//! Shared fixtures for the benchmarks.

use nnfdk_core::phantoms::{generate_spec, rasterize, Family};
use nnfdk_core::{ConeBeamGeometry, ProjectionData, Projector, Volume};

/// Projector, phantom volume and its projections at size `n` with `n_angles` views.
pub fn fixture(n: usize, n_angles: usize) -> (Projector, Volume, ProjectionData) {
    let geometry = ConeBeamGeometry::new(n, n_angles, 10.0, 10.0).expect("valid geometry");
    let projector = Projector::new(geometry).expect("valid projector");
    let volume = rasterize(&generate_spec(Family::FourshapeTest, 0), n);
    let projections = projector.forward_project(&volume).expect("matching shapes");
    (projector, volume, projections)
}
