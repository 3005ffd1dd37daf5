//! Phantom families, rasterization, data simulation and the Poisson noise model.
//!
//! Phantoms are defined geometrically in physical units inside a cube of
//! side `phys_size` centered at the origin, so they can be rasterized at any
//! resolution. Objects are kept inside the cylinder `r ≤ 0.4·phys_size`,
//! `|z| ≤ 0.4·phys_size`, which stays fully visible on the detector for
//! source radius factors above 2. Where objects overlap, later objects
//! overwrite earlier ones.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConeBeamGeometry, ProjectionData, Volume};
use crate::projector::{bilinear, Projector};

/// Attenuation of common plastics at 40 keV (cm⁻¹).
pub const DEFAULT_MU: f64 = 0.22;
pub const DEFAULT_PHYS_SIZE: f64 = 10.0;
/// Fraction of the cube side bounding object extents (radius and half height).
pub const SUPPORT: f64 = 0.4;
pub const STAR_SECTORS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Fourshape,
    RandomDefrise,
    FourshapeTest,
    DefriseTest,
    /// Shell around an empty cavity holding a kernel; used for segmentation.
    ShellKernel,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fourshape" => Family::Fourshape,
            "random_defrise" => Family::RandomDefrise,
            "fourshape_test" => Family::FourshapeTest,
            "defrise_test" => Family::DefriseTest,
            "shell_kernel" => Family::ShellKernel,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown phantom family {s:?}"
                )))
            }
        })
    }
}

/// Position and orientation (Z-Y-Z Euler angles, radians) of an object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub center: [f64; 3],
    pub euler: [f64; 3],
}

impl Pose {
    pub fn at(center: [f64; 3]) -> Self {
        Self {
            center,
            euler: [0.0; 3],
        }
    }

    /// Columns are the object's local axes in world coordinates.
    fn rotation(&self) -> [[f64; 3]; 3] {
        let [a, b, c] = self.euler;
        let (sa, ca) = a.sin_cos();
        let (sb, cb) = b.sin_cos();
        let (sc, cc) = c.sin_cos();
        [
            [ca * cb * cc - sa * sc, -ca * cb * sc - sa * cc, ca * sb],
            [sa * cb * cc + ca * sc, -sa * cb * sc + ca * cc, sa * sb],
            [-sb * cc, sb * sc, cb],
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Ellipsoid {
        semi_axes: [f64; 3],
    },
    Box {
        half_sizes: [f64; 3],
    },
    /// Gaussian profile truncated at 3σ.
    GaussianBlob {
        sigmas: [f64; 3],
    },
    /// Alternating angular sectors in the local xy-plane, extruded along local z.
    SiemensStar {
        radius: f64,
        half_thickness: f64,
        sectors: usize,
    },
    /// Flat cylinder with its axis along local z.
    Disk {
        radius: f64,
        half_thickness: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomObject {
    pub shape: Shape,
    pub pose: Pose,
    /// Relative intensity, multiplied by the phantom's μ.
    pub intensity: f64,
}

impl PhantomObject {
    /// Radius of a ball around the center containing the object.
    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Ellipsoid { semi_axes } => semi_axes.iter().cloned().fold(0.0, f64::max),
            Shape::Box { half_sizes } => half_sizes.iter().map(|h| h * h).sum::<f64>().sqrt(),
            Shape::GaussianBlob { sigmas } => 3.0 * sigmas.iter().cloned().fold(0.0, f64::max),
            Shape::SiemensStar {
                radius,
                half_thickness,
                ..
            }
            | Shape::Disk {
                radius,
                half_thickness,
            } => radius.hypot(half_thickness),
        }
    }

    /// Half the extent of the object along world z.
    pub fn z_half_extent(&self) -> f64 {
        let rot = self.pose.rotation();
        // World z component of each local axis.
        let zr = rot[2];
        match self.shape {
            Shape::Ellipsoid { semi_axes: s } => {
                (0..3).map(|i| (zr[i] * s[i]).powi(2)).sum::<f64>().sqrt()
            }
            Shape::Box { half_sizes: h } => (0..3).map(|i| (zr[i] * h[i]).abs()).sum(),
            Shape::GaussianBlob { sigmas: s } => {
                3.0 * (0..3).map(|i| (zr[i] * s[i]).powi(2)).sum::<f64>().sqrt()
            }
            Shape::SiemensStar {
                radius,
                half_thickness,
                ..
            }
            | Shape::Disk {
                radius,
                half_thickness,
            } => {
                let cos_tilt = zr[2].abs();
                let sin_tilt = (1.0 - cos_tilt * cos_tilt).max(0.0).sqrt();
                radius * sin_tilt + half_thickness * cos_tilt
            }
        }
    }

    fn local(&self, rot: &[[f64; 3]; 3], p: [f64; 3]) -> [f64; 3] {
        let d = [
            p[0] - self.pose.center[0],
            p[1] - self.pose.center[1],
            p[2] - self.pose.center[2],
        ];
        // Rᵀ·d
        [
            rot[0][0] * d[0] + rot[1][0] * d[1] + rot[2][0] * d[2],
            rot[0][1] * d[0] + rot[1][1] * d[1] + rot[2][1] * d[2],
            rot[0][2] * d[0] + rot[1][2] * d[1] + rot[2][2] * d[2],
        ]
    }

    /// Relative value at a local point, `None` outside the object.
    fn value_local(&self, q: [f64; 3]) -> Option<f64> {
        match self.shape {
            Shape::Ellipsoid { semi_axes: s } => {
                let r2 = (q[0] / s[0]).powi(2) + (q[1] / s[1]).powi(2) + (q[2] / s[2]).powi(2);
                (r2 <= 1.0).then_some(self.intensity)
            }
            Shape::Box { half_sizes: h } => {
                (q[0].abs() <= h[0] && q[1].abs() <= h[1] && q[2].abs() <= h[2])
                    .then_some(self.intensity)
            }
            Shape::GaussianBlob { sigmas: s } => {
                let r2 = (q[0] / s[0]).powi(2) + (q[1] / s[1]).powi(2) + (q[2] / s[2]).powi(2);
                (r2 <= 9.0).then(|| self.intensity * (-0.5 * r2).exp())
            }
            Shape::SiemensStar {
                radius,
                half_thickness,
                sectors,
            } => {
                if q[2].abs() > half_thickness || q[0].hypot(q[1]) > radius {
                    return None;
                }
                let angle = q[1].atan2(q[0]) + PI;
                let sector = ((angle / (2.0 * PI) * sectors as f64) as usize).min(sectors - 1);
                (sector % 2 == 0).then_some(self.intensity)
            }
            Shape::Disk {
                radius,
                half_thickness,
            } => (q[2].abs() <= half_thickness && q[0].hypot(q[1]) <= radius)
                .then_some(self.intensity),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub family: Family,
    pub seed: u64,
    pub mu: f64,
    pub phys_size: f64,
    pub objects: Vec<PhantomObject>,
}

impl PhantomSpec {
    pub fn empty(phys_size: f64) -> Self {
        Self {
            family: Family::Fourshape,
            seed: 0,
            mu: DEFAULT_MU,
            phys_size,
            objects: Vec::new(),
        }
    }

    /// Checks μ and that every object lies inside the support cylinder.
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "μ={} must be positive",
                self.mu
            )));
        }
        let lim = SUPPORT * self.phys_size * (1.0 + 1e-9);
        for (i, o) in self.objects.iter().enumerate() {
            let c = o.pose.center;
            if c[0].hypot(c[1]) + o.bounding_radius() > lim || c[2].abs() + o.z_half_extent() > lim
            {
                return Err(Error::InvalidArgument(format!(
                    "object {i} extends outside the phantom support"
                )));
            }
        }
        Ok(())
    }

    /// Value (cm⁻¹) at a physical point; the last containing object wins.
    pub fn value_at(&self, p: [f64; 3]) -> f64 {
        self.value_with(&self.rotations(), p)
    }

    fn rotations(&self) -> Vec<[[f64; 3]; 3]> {
        self.objects.iter().map(|o| o.pose.rotation()).collect()
    }

    fn value_with(&self, rots: &[[[f64; 3]; 3]], p: [f64; 3]) -> f64 {
        for (o, rot) in self.objects.iter().zip(rots).rev() {
            let c = o.pose.center;
            let br = o.bounding_radius();
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
            if d2 > br * br {
                continue;
            }
            if let Some(v) = o.value_local(o.local(rot, p)) {
                return self.mu * v;
            }
        }
        0.0
    }

    /// Index of the last object containing `p`, if any.
    pub fn object_at(&self, p: [f64; 3]) -> Option<usize> {
        let rots = self.rotations();
        (0..self.objects.len()).rev().find(|&i| {
            let o = &self.objects[i];
            o.value_local(o.local(&rots[i], p)).is_some()
        })
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn random_euler(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        uniform(rng, 0.0, 2.0 * PI),
        rng.random::<f64>().mul_add(2.0, -1.0).acos(),
        uniform(rng, 0.0, 2.0 * PI),
    ]
}

/// Uniform center such that a ball of radius `br` stays in the support.
fn random_center(rng: &mut ChaCha8Rng, br: f64, phys: f64) -> [f64; 3] {
    let rmax = SUPPORT * phys - br;
    let zmax = SUPPORT * phys - br;
    loop {
        let (x, y) = (uniform(rng, -rmax, rmax), uniform(rng, -rmax, rmax));
        if x.hypot(y) <= rmax {
            return [x, y, uniform(rng, -zmax, zmax)];
        }
    }
}

pub fn generate_spec(family: Family, seed: u64) -> PhantomSpec {
    generate_spec_with(family, seed, DEFAULT_MU, DEFAULT_PHYS_SIZE)
}

pub fn generate_spec_with(family: Family, seed: u64, mu: f64, phys_size: f64) -> PhantomSpec {
    let objects = match family {
        Family::Fourshape => fourshape_objects(seed, phys_size),
        Family::RandomDefrise => random_defrise_objects(seed, phys_size),
        Family::FourshapeTest => fourshape_test_objects(phys_size),
        Family::DefriseTest => defrise_test_objects(phys_size),
        Family::ShellKernel => shell_kernel_objects(seed, phys_size),
    };
    PhantomSpec {
        family,
        seed,
        mu,
        phys_size,
        objects,
    }
}

fn fourshape_objects(seed: u64, l: f64) -> Vec<PhantomObject> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects = Vec::with_capacity(12);
    for kind in 0..4 {
        for _ in 0..3 {
            let shape = match kind {
                0 => Shape::Ellipsoid {
                    semi_axes: [
                        uniform(&mut rng, 0.05, 0.18) * l,
                        uniform(&mut rng, 0.05, 0.18) * l,
                        uniform(&mut rng, 0.05, 0.18) * l,
                    ],
                },
                1 => Shape::Box {
                    half_sizes: [
                        uniform(&mut rng, 0.04, 0.12) * l,
                        uniform(&mut rng, 0.04, 0.12) * l,
                        uniform(&mut rng, 0.04, 0.12) * l,
                    ],
                },
                2 => Shape::GaussianBlob {
                    sigmas: [
                        uniform(&mut rng, 0.02, 0.06) * l,
                        uniform(&mut rng, 0.02, 0.06) * l,
                        uniform(&mut rng, 0.02, 0.06) * l,
                    ],
                },
                _ => Shape::SiemensStar {
                    radius: uniform(&mut rng, 0.08, 0.18) * l,
                    half_thickness: uniform(&mut rng, 0.03, 0.08) * l,
                    sectors: STAR_SECTORS,
                },
            };
            let mut obj = PhantomObject {
                shape,
                pose: Pose::at([0.0; 3]),
                intensity: uniform(&mut rng, 0.4, 1.0),
            };
            obj.pose = Pose {
                center: random_center(&mut rng, obj.bounding_radius(), l),
                euler: random_euler(&mut rng),
            };
            objects.push(obj);
        }
    }
    objects.shuffle(&mut rng);
    objects
}

/// Fixed realization with one object of every type in the `z = 0` plane.
fn fourshape_test_objects(l: f64) -> Vec<PhantomObject> {
    let obj = |shape, center: [f64; 3], euler: [f64; 3], intensity| PhantomObject {
        shape,
        pose: Pose { center, euler },
        intensity,
    };
    vec![
        obj(
            Shape::Box {
                half_sizes: [0.06 * l, 0.1 * l, 0.05 * l],
            },
            [0.05 * l, 0.05 * l, 0.22 * l],
            [0.4, 0.3, 0.0],
            0.5,
        ),
        obj(
            Shape::Ellipsoid {
                semi_axes: [0.1 * l, 0.06 * l, 0.08 * l],
            },
            [-0.1 * l, 0.15 * l, -0.22 * l],
            [1.1, 0.6, 0.2],
            0.7,
        ),
        obj(
            Shape::GaussianBlob {
                sigmas: [0.04 * l, 0.05 * l, 0.03 * l],
            },
            [0.12 * l, -0.05 * l, -0.2 * l],
            [0.3, 1.2, 0.0],
            0.9,
        ),
        obj(
            Shape::SiemensStar {
                radius: 0.1 * l,
                half_thickness: 0.04 * l,
                sectors: STAR_SECTORS,
            },
            [-0.05 * l, -0.2 * l, 0.25 * l],
            [0.0, 0.5, 0.0],
            0.6,
        ),
        obj(
            Shape::Ellipsoid {
                semi_axes: [0.05 * l, 0.05 * l, 0.12 * l],
            },
            [0.24 * l, 0.02 * l, 0.22 * l],
            [0.0, 0.0, 0.0],
            0.45,
        ),
        obj(
            Shape::Box {
                half_sizes: [0.04 * l, 0.04 * l, 0.04 * l],
            },
            [-0.2 * l, -0.1 * l, -0.22 * l],
            [0.7, 0.7, 0.7],
            0.8,
        ),
        obj(
            Shape::GaussianBlob {
                sigmas: [0.03 * l, 0.03 * l, 0.06 * l],
            },
            [0.0, 0.22 * l, 0.2 * l],
            [0.0, 0.0, 0.0],
            1.0,
        ),
        obj(
            Shape::SiemensStar {
                radius: 0.08 * l,
                half_thickness: 0.03 * l,
                sectors: STAR_SECTORS,
            },
            [0.2 * l, -0.2 * l, -0.25 * l],
            [0.9, 0.2, 0.0],
            0.75,
        ),
        // In-plane set, rasterized last so that it is unobstructed.
        obj(
            Shape::Ellipsoid {
                semi_axes: [0.12 * l, 0.07 * l, 0.06 * l],
            },
            [-0.17 * l, 0.17 * l, 0.0],
            [0.5, 0.0, 0.0],
            0.8,
        ),
        obj(
            Shape::Box {
                half_sizes: [0.09 * l, 0.06 * l, 0.06 * l],
            },
            [0.17 * l, 0.17 * l, 0.0],
            [-0.3, 0.0, 0.0],
            0.6,
        ),
        obj(
            Shape::GaussianBlob {
                sigmas: [0.05 * l, 0.04 * l, 0.04 * l],
            },
            [-0.17 * l, -0.17 * l, 0.0],
            [0.0, 0.0, 0.0],
            1.0,
        ),
        obj(
            Shape::SiemensStar {
                radius: 0.11 * l,
                half_thickness: 0.05 * l,
                sectors: STAR_SECTORS,
            },
            [0.17 * l, -0.17 * l, 0.0],
            [0.0, 0.0, 0.0],
            0.9,
        ),
    ]
}

fn disk(
    center_z: f64,
    radius: f64,
    half_thickness: f64,
    euler: [f64; 3],
    intensity: f64,
) -> PhantomObject {
    PhantomObject {
        shape: Shape::Disk {
            radius,
            half_thickness,
        },
        pose: Pose {
            center: [0.0, 0.0, center_z],
            euler,
        },
        intensity,
    }
}

/// Half the z-extent of a disk tilted by `tilt` from the z axis.
fn disk_half_extent(radius: f64, half_thickness: f64, tilt: f64) -> f64 {
    radius * tilt.sin() + half_thickness * tilt.cos()
}

/// Disks stacked along z; their z-slabs are disjoint, so they never overlap.
fn random_defrise_objects(seed: u64, l: f64) -> Vec<PhantomObject> {
    const MAX_DISKS: usize = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zmax = SUPPORT * l;
    let mut objects = Vec::new();
    let mut cursor = -zmax;
    while objects.len() < MAX_DISKS {
        let radius = uniform(&mut rng, 0.25, 0.38) * l;
        let half_thickness = uniform(&mut rng, 0.015, 0.04) * l;
        let tilt = uniform(&mut rng, 0.0, 8f64.to_radians());
        let azimuth = uniform(&mut rng, 0.0, 2.0 * PI);
        let gap = uniform(&mut rng, 0.02, 0.06) * l;
        let intensity = uniform(&mut rng, 0.4, 1.0);
        let ext = disk_half_extent(radius, half_thickness, tilt);
        let start = if objects.is_empty() {
            cursor
        } else {
            cursor + gap
        };
        let center_z = start + ext;
        if center_z + ext > zmax {
            break;
        }
        objects.push(disk(
            center_z,
            radius,
            half_thickness,
            [azimuth, tilt, 0.0],
            intensity,
        ));
        cursor = center_z + ext;
    }
    objects
}

/// Standard Defrise stack: equal disks and gaps, uniform intensity.
fn defrise_test_objects(l: f64) -> Vec<PhantomObject> {
    let n_disks = 7;
    let height = 2.0 * SUPPORT * l * 0.9;
    let pitch = height / (2 * n_disks - 1) as f64;
    (0..n_disks)
        .map(|k| {
            let z = -0.5 * height + pitch * (2 * k) as f64 + 0.5 * pitch;
            disk(z, 0.3 * l, 0.5 * pitch, [0.0; 3], 1.0)
        })
        .collect()
}

/// Ellipsoidal shell (intensity 1) around an empty cavity holding a kernel
/// (intensity ~0.55).
fn shell_kernel_objects(seed: u64, l: f64) -> Vec<PhantomObject> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outer = [
        uniform(&mut rng, 0.34, 0.38) * l,
        uniform(&mut rng, 0.34, 0.38) * l,
        uniform(&mut rng, 0.34, 0.38) * l,
    ];
    let thickness = uniform(&mut rng, 0.06, 0.07) * l;
    let inner = outer.map(|a| a - thickness);
    let kernel = inner.map(|a| a * uniform(&mut rng, 0.55, 0.65));
    let euler = [uniform(&mut rng, 0.0, PI), 0.0, 0.0];
    let ell = |semi_axes, intensity| PhantomObject {
        shape: Shape::Ellipsoid { semi_axes },
        pose: Pose {
            center: [0.0; 3],
            euler,
        },
        intensity,
    };
    vec![
        ell(outer, 1.0),
        ell(inner, 0.0),
        ell(kernel, uniform(&mut rng, 0.5, 0.6)),
    ]
}

/// Voxel-center sampling of the phantom on an `n³` grid over its cube.
pub fn rasterize(spec: &PhantomSpec, n: usize) -> Volume {
    let vs = spec.phys_size / n as f64;
    let coord = |i: usize| (i as f64 + 0.5 - 0.5 * n as f64) * vs;
    let rots = spec.rotations();
    let mut vol = Volume::zeros(n);
    vol.data
        .par_chunks_mut(n * n)
        .enumerate()
        .for_each(|(z, slab)| {
            let cz = coord(z);
            for y in 0..n {
                let cy = coord(y);
                for x in 0..n {
                    slab[y * n + x] = spec.value_with(&rots, [coord(x), cy, cz]);
                }
            }
        });
    vol
}

/// Clean projection data generated on a finer grid and bilinearly resampled
/// onto the detector of `geometry`.
pub fn simulate_data(
    spec: &PhantomSpec,
    geometry: &ConeBeamGeometry,
    oversample_factor: f64,
) -> Result<ProjectionData> {
    if !(oversample_factor >= 1.0 && oversample_factor.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "oversample factor {oversample_factor} must be at least 1"
        )));
    }
    let n = geometry.n_voxels;
    if (spec.phys_size - geometry.phys_size()).abs() > 1e-9 * spec.phys_size {
        return Err(Error::InvalidArgument(format!(
            "phantom size {} cm does not match geometry size {} cm",
            spec.phys_size,
            geometry.phys_size()
        )));
    }
    let fine_n = (oversample_factor * n as f64 - 1e-9).ceil() as usize;
    if fine_n == n {
        let projector = Projector::new(geometry.clone())?;
        return projector.forward_project(&rasterize(spec, n));
    }

    let mut fine = geometry.clone();
    fine.n_voxels = fine_n;
    fine.voxel_size = spec.phys_size / fine_n as f64;
    fine.n_detector = fine_n;
    fine.pixel_size = geometry.detector_height() / fine_n as f64;
    let fine_data = Projector::new(fine.clone())?.forward_project(&rasterize(spec, fine_n))?;

    let nd = geometry.n_detector;
    let half = 0.5 * fine_n as f64 - 0.5;
    let idx: Vec<(isize, f64)> = (0..nd)
        .map(|j| {
            let c = geometry.pixel_coord(j) / fine.pixel_size + half;
            let f = c.floor();
            (f as isize, c - f)
        })
        .collect();
    let mut out = geometry.zero_projections();
    out.data
        .par_chunks_mut(nd * nd)
        .enumerate()
        .for_each(|(a, img)| {
            let src = fine_data.angle(a);
            for (row, &(iv, fv)) in idx.iter().enumerate() {
                for (col, &(iu, fu)) in idx.iter().enumerate() {
                    img[row * nd + col] = bilinear(src, fine_n, iv, fv, iu, fu);
                }
            }
        });
    Ok(out)
}

/// Transmission noise: `I = I₀e^{−y}`, `I_noise ~ Pois(I)`, `y = −log(I_noise/I₀)`.
/// Zero counts are clamped to one photon.
pub fn add_noise(clean: &ProjectionData, i0: f64, seed: u64) -> Result<ProjectionData> {
    if !(i0 >= 1.0 && i0.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "photon count I0={i0} must be ≥ 1"
        )));
    }
    if clean.data.iter().any(|y| !(y.is_finite() && *y >= 0.0)) {
        return Err(Error::InvalidArgument(
            "clean line integrals must be finite and nonnegative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = clean.clone();
    for y in out.data.iter_mut() {
        let lambda = i0 * (-*y).exp();
        let count = if lambda > 0.0 {
            Poisson::new(lambda)
                .map_err(|e| Error::Numerical(format!("Poisson({lambda}): {e}")))?
                .sample(&mut rng)
        } else {
            0.0
        };
        *y = -(count.max(1.0) / i0).ln();
    }
    Ok(out)
}
