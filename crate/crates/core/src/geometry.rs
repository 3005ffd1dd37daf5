//! Circular cone-beam acquisition geometry and the arrays living on its grids.
//!
//! Coordinates are physical (cm) with the rotation axis along `z` through the
//! origin. The volume is an `N×N×N` cube centered at the origin, stored in
//! C-order `(z, y, x)`. At rotation angle `φ` the source sits at
//! `R_s·(cos φ, sin φ, 0)` and the flat detector is centered at
//! `−R_d·(cos φ, sin φ, 0)`, perpendicular to the source–center axis. Detector
//! columns run along `u = (−sin φ, cos φ, 0)` and rows along `z`, so projection
//! data is stored as `(angle, row, column)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeBeamGeometry {
    pub n_voxels: usize,
    pub voxel_size: f64,
    pub n_detector: usize,
    pub pixel_size: f64,
    pub n_angles: usize,
    pub source_radius: f64,
    pub detector_radius: f64,
    pub angles: Vec<f64>,
}

impl ConeBeamGeometry {
    /// Builds the geometry used throughout the simulations: a `phys_size` cube
    /// sampled by `n_voxels³` voxels, the source at `source_radius_factor`
    /// times the cube size, and a flat `n_voxels²` detector at the same
    /// distance on the other side whose pixels are the voxels magnified onto
    /// the detector plane.
    pub fn new(
        n_voxels: usize,
        n_angles: usize,
        source_radius_factor: f64,
        phys_size: f64,
    ) -> Result<Self> {
        if !(source_radius_factor.is_finite() && phys_size.is_finite() && phys_size > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "source_radius_factor={source_radius_factor}, phys_size={phys_size}"
            )));
        }
        // The circumscribed sphere of the cube has radius √3/2 · phys_size.
        if source_radius_factor <= 0.5 * 3f64.sqrt() {
            return Err(Error::InvalidGeometry(format!(
                "source radius factor {source_radius_factor} places the source inside the reconstruction sphere (must exceed {:.4})",
                0.5 * 3f64.sqrt()
            )));
        }
        let source_radius = source_radius_factor * phys_size;
        Self::with_distances(n_voxels, n_angles, phys_size, source_radius, source_radius)
    }

    /// Same as [`ConeBeamGeometry::new`] with an explicit rotation-center to
    /// detector distance.
    pub fn with_distances(
        n_voxels: usize,
        n_angles: usize,
        phys_size: f64,
        source_radius: f64,
        detector_radius: f64,
    ) -> Result<Self> {
        if n_voxels < 4 {
            return Err(Error::InvalidGeometry(format!("n_voxels={n_voxels} < 4")));
        }
        if n_angles < 1 {
            return Err(Error::InvalidGeometry("n_angles must be at least 1".into()));
        }
        if !(detector_radius > 0.0 && detector_radius.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "detector_radius={detector_radius}"
            )));
        }
        if !(source_radius.is_finite() && source_radius > 0.5 * 3f64.sqrt() * phys_size) {
            return Err(Error::InvalidGeometry(format!(
                "source radius {source_radius} cm lies inside the reconstruction sphere of a {phys_size} cm cube"
            )));
        }
        let voxel_size = phys_size / n_voxels as f64;
        let magnification = (source_radius + detector_radius) / source_radius;
        let geometry = Self {
            n_voxels,
            voxel_size,
            n_detector: n_voxels,
            pixel_size: voxel_size * magnification,
            n_angles,
            source_radius,
            detector_radius,
            angles: equispaced_angles(n_angles),
        };
        geometry.validate()?;
        Ok(geometry)
    }

    /// Returns a copy with a different number of equispaced angles.
    pub fn with_angles(&self, n_angles: usize) -> Result<Self> {
        let mut g = self.clone();
        g.n_angles = n_angles;
        g.angles = equispaced_angles(n_angles);
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidGeometry(msg));
        if self.n_voxels < 4 || self.n_detector < 1 || self.n_angles < 1 {
            return bad(format!(
                "n_voxels={}, n_detector={}, n_angles={}",
                self.n_voxels, self.n_detector, self.n_angles
            ));
        }
        for (name, v) in [
            ("voxel_size", self.voxel_size),
            ("pixel_size", self.pixel_size),
            ("source_radius", self.source_radius),
            ("detector_radius", self.detector_radius),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name}={v} must be finite and positive"));
            }
        }
        if self.angles.len() != self.n_angles {
            return bad(format!(
                "{} angles listed for n_angles={}",
                self.angles.len(),
                self.n_angles
            ));
        }
        if self.angles.windows(2).any(|w| w[1] <= w[0])
            || self.angles.iter().any(|a| !(0.0..2.0 * PI).contains(a))
        {
            return bad("angles must be strictly increasing within [0, 2π)".into());
        }
        Ok(())
    }

    pub fn phys_size(&self) -> f64 {
        self.voxel_size * self.n_voxels as f64
    }

    pub fn source_to_detector(&self) -> f64 {
        self.source_radius + self.detector_radius
    }

    pub fn magnification(&self) -> f64 {
        self.source_to_detector() / self.source_radius
    }

    pub fn detector_height(&self) -> f64 {
        self.pixel_size * self.n_detector as f64
    }

    /// Full opening angle (degrees) of the cone subtending the detector height
    /// at the source.
    pub fn cone_angle(&self) -> f64 {
        cone_angle_deg(self.detector_height(), self.source_to_detector())
    }

    pub fn volume_len(&self) -> usize {
        self.n_voxels.pow(3)
    }

    pub fn projection_len(&self) -> usize {
        self.n_angles * self.n_detector * self.n_detector
    }

    /// Physical coordinate of voxel center `i` along any axis.
    #[inline]
    pub fn voxel_coord(&self, i: usize) -> f64 {
        (i as f64 + 0.5 - 0.5 * self.n_voxels as f64) * self.voxel_size
    }

    /// Physical coordinate of detector pixel center `j` along `u` or `v`.
    #[inline]
    pub fn pixel_coord(&self, j: usize) -> f64 {
        (j as f64 + 0.5 - 0.5 * self.n_detector as f64) * self.pixel_size
    }

    pub fn zero_volume(&self) -> Volume {
        Volume::zeros(self.n_voxels)
    }

    pub fn zero_projections(&self) -> ProjectionData {
        ProjectionData::zeros(self.n_angles, self.n_detector)
    }
}

pub fn cone_angle_deg(detector_height: f64, source_to_detector: f64) -> f64 {
    (2.0 * (0.5 * detector_height / source_to_detector).atan()).to_degrees()
}

/// `k·2π/n` for `k = 0..n`.
pub fn equispaced_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

/// Attenuation values (cm⁻¹) on an `N³` grid, C-order `(z, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n * n {
            return Err(Error::shape(n * n * n, data.len()));
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.n + y) * self.n + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(z, y, x)]
    }

    pub fn slice_z(&self, z: usize) -> &[f64] {
        let s = self.n * self.n;
        &self.data[z * s..(z + 1) * s]
    }

    /// The `x = x0` plane as a `(z, y)` image.
    pub fn slice_x(&self, x0: usize) -> Vec<f64> {
        let n = self.n;
        let mut out = Vec::with_capacity(n * n);
        for z in 0..n {
            for y in 0..n {
                out.push(self.get(z, y, x0));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_geometry(&self, geometry: &ConeBeamGeometry) -> Result<()> {
        if self.n != geometry.n_voxels || self.data.len() != geometry.volume_len() {
            return Err(Error::shape(
                format!("{0}x{0}x{0} volume", geometry.n_voxels),
                format!("{0}x{0}x{0} volume ({1} values)", self.n, self.data.len()),
            ));
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Boolean voxel mask on an `N³` grid, same layout as [`Volume`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub n: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            data: vec![false; n * n * n],
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            n,
            data: vec![true; n * n * n],
        }
    }

    pub fn from_fn(volume: &Volume, f: impl Fn(f64) -> bool) -> Self {
        Self {
            n: volume.n,
            data: volume.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.data.len()).filter(|&i| self.data[i]).collect()
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if self.data.len() != len {
            return Err(Error::shape(len, self.data.len()));
        }
        Ok(())
    }
}

/// Line integrals on an `N_a × N × N` detector stack, `(angle, row, column)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionData {
    pub n_angles: usize,
    pub n_det: usize,
    pub data: Vec<f64>,
}

impl ProjectionData {
    pub fn zeros(n_angles: usize, n_det: usize) -> Self {
        Self {
            n_angles,
            n_det,
            data: vec![0.0; n_angles * n_det * n_det],
        }
    }

    pub fn from_vec(n_angles: usize, n_det: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_angles * n_det * n_det {
            return Err(Error::shape(n_angles * n_det * n_det, data.len()));
        }
        Ok(Self {
            n_angles,
            n_det,
            data,
        })
    }

    #[inline]
    pub fn index(&self, a: usize, row: usize, col: usize) -> usize {
        (a * self.n_det + row) * self.n_det + col
    }

    pub fn angle(&self, a: usize) -> &[f64] {
        let s = self.n_det * self.n_det;
        &self.data[a * s..(a + 1) * s]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_geometry(&self, geometry: &ConeBeamGeometry) -> Result<()> {
        if self.n_angles != geometry.n_angles
            || self.n_det != geometry.n_detector
            || self.data.len() != geometry.projection_len()
        {
            return Err(Error::shape(
                format!(
                    "{}x{1}x{1} projections",
                    geometry.n_angles, geometry.n_detector
                ),
                format!("{}x{1}x{1} projections", self.n_angles, self.n_det),
            ));
        }
        Ok(())
    }
}
