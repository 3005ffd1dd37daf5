//! Discretized cone-beam transform and its (approximate) transpose.
//!
//! The forward projector is ray driven: every detector pixel integrates the
//! trilinearly interpolated volume along the segment from the source to the
//! pixel center, sampled at half-voxel steps. The backprojector is voxel
//! driven: every voxel center is projected onto the detector and the data is
//! read with bilinear interpolation. The two operators are not an exactly
//! matched pair; see [`Projector::back_project`] for the scaling that makes
//! them adjoint up to discretization error.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{ConeBeamGeometry, ProjectionData, Volume};

/// Number of operator applications performed by a [`Projector`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub forward: usize,
    pub back: usize,
    pub filter: usize,
}

impl OpCounts {
    pub fn since(&self, earlier: &OpCounts) -> OpCounts {
        OpCounts {
            forward: self.forward - earlier.forward,
            back: self.back - earlier.back,
            filter: self.filter - earlier.filter,
        }
    }

    pub fn projector_calls(&self) -> usize {
        self.forward + self.back
    }
}

/// Cone-beam operators bound to one geometry, with call counters.
#[derive(Debug)]
pub struct Projector {
    geometry: ConeBeamGeometry,
    forward_calls: AtomicUsize,
    back_calls: AtomicUsize,
    filter_calls: AtomicUsize,
}

/// Weighting applied by the backprojector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackWeighting {
    /// Approximate transpose of the forward projector.
    Transpose,
    /// FDK distance weighting including the angular and filter normalization,
    /// so that FDK of ideal data returns attenuation in cm⁻¹.
    Fdk,
}

impl Projector {
    pub fn new(geometry: ConeBeamGeometry) -> Result<Self> {
        geometry.validate()?;
        Ok(Self {
            geometry,
            forward_calls: AtomicUsize::new(0),
            back_calls: AtomicUsize::new(0),
            filter_calls: AtomicUsize::new(0),
        })
    }

    pub fn geometry(&self) -> &ConeBeamGeometry {
        &self.geometry
    }

    pub fn counts(&self) -> OpCounts {
        OpCounts {
            forward: self.forward_calls.load(Ordering::Relaxed),
            back: self.back_calls.load(Ordering::Relaxed),
            filter: self.filter_calls.load(Ordering::Relaxed),
        }
    }

    pub(crate) fn record_filter(&self) {
        self.filter_calls.fetch_add(1, Ordering::Relaxed);
    }

    /// Line integrals of `volume` from the source to every detector pixel center.
    pub fn forward_project(&self, volume: &Volume) -> Result<ProjectionData> {
        let g = &self.geometry;
        volume.check_geometry(g)?;
        self.forward_calls.fetch_add(1, Ordering::Relaxed);

        let n = g.n_voxels;
        let nd = g.n_detector;
        let mut out = g.zero_projections();
        let half = 0.5 * n as f64 - 0.5;
        let inv_vs = 1.0 / g.voxel_size;
        // Interpolation support of the voxel grid in index coordinates.
        let (lo, hi) = (-0.5, n as f64 - 0.5);

        out.data
            .par_chunks_mut(nd)
            .enumerate()
            .for_each(|(chunk, row_out)| {
                let a = chunk / nd;
                let row = chunk % nd;
                let (sin, cos) = g.angles[a].sin_cos();
                let src = [g.source_radius * cos, g.source_radius * sin, 0.0];
                let v = g.pixel_coord(row);
                for (col, px) in row_out.iter_mut().enumerate() {
                    let u = g.pixel_coord(col);
                    let det = [
                        -g.detector_radius * cos - u * sin,
                        -g.detector_radius * sin + u * cos,
                        v,
                    ];
                    // Ray in voxel index space: p(t) = o + t·d, t ∈ [0, 1].
                    let o = [
                        src[0] * inv_vs + half,
                        src[1] * inv_vs + half,
                        src[2] * inv_vs + half,
                    ];
                    let d = [
                        (det[0] - src[0]) * inv_vs,
                        (det[1] - src[1]) * inv_vs,
                        (det[2] - src[2]) * inv_vs,
                    ];
                    *px = match clip_to_box(&o, &d, lo, hi) {
                        Some((t0, t1)) => {
                            let len_idx = (t1 - t0) * norm3(&d);
                            // Half-voxel steps, midpoint rule.
                            let steps = (len_idx / 0.5).ceil().max(1.0) as usize;
                            let dt = (t1 - t0) / steps as f64;
                            let mut acc = 0.0;
                            for k in 0..steps {
                                let t = t0 + (k as f64 + 0.5) * dt;
                                acc += trilinear(
                                    &volume.data,
                                    n,
                                    o[0] + t * d[0],
                                    o[1] + t * d[1],
                                    o[2] + t * d[2],
                                );
                            }
                            acc * dt * norm3(&d) * g.voxel_size
                        }
                        None => 0.0,
                    };
                }
            });
        Ok(out)
    }

    /// Voxel-driven backprojection.
    ///
    /// Every voxel accumulates, over all angles, `w(dist)·P(u, v)` where
    /// `(u, v)` is the detector position of the voxel center, `P` the bilinear
    /// interpolant of the projection (zero off the detector), and `dist` the
    /// distance from the source to the voxel along the central ray. Both
    /// weightings are of the form `c / dist²`:
    ///
    /// * [`BackWeighting::Transpose`]: `c = vs³·(R_s+R_d)²/pix²`, the ray
    ///   density through a voxel at that depth, which makes this an
    ///   approximate transpose of [`Projector::forward_project`].
    /// * [`BackWeighting::Fdk`]: `c = (π/N_a)·M·pix·R_s²`, i.e. the FDK
    ///   weight `(R_s/dist)²` times the angular step and the conversion from
    ///   detector-sampled filter taps to the virtual detector at the origin.
    pub fn back_project(
        &self,
        projections: &ProjectionData,
        weighting: BackWeighting,
    ) -> Result<Volume> {
        let g = &self.geometry;
        projections.check_geometry(g)?;
        self.back_calls.fetch_add(1, Ordering::Relaxed);

        let n = g.n_voxels;
        let nd = g.n_detector;
        let sd = g.source_to_detector();
        let c = match weighting {
            BackWeighting::Transpose => {
                g.voxel_size.powi(3) * sd * sd / (g.pixel_size * g.pixel_size)
            }
            BackWeighting::Fdk => {
                PI / g.n_angles as f64 * g.magnification() * g.pixel_size * g.source_radius.powi(2)
            }
        };

        let mut vol = g.zero_volume();
        let plane = n * n;
        let det_half = 0.5 * nd as f64 - 0.5;
        let inv_pix = 1.0 / g.pixel_size;
        let coords: Vec<f64> = (0..n).map(|i| g.voxel_coord(i)).collect();
        let mut table = vec![ColumnProjection::default(); plane];

        for (a, &angle) in g.angles.iter().enumerate() {
            let (sin, cos) = angle.sin_cos();
            for (y, &cy) in coords.iter().enumerate() {
                for (x, &cx) in coords.iter().enumerate() {
                    let dist = g.source_radius - (cx * cos + cy * sin);
                    let mag = sd / dist;
                    let w = -cx * sin + cy * cos;
                    let cu = mag * w * inv_pix + det_half;
                    let iu = cu.floor();
                    table[y * n + x] = ColumnProjection {
                        iu: iu as isize,
                        fu: cu - iu,
                        v_scale: mag * inv_pix,
                        weight: c / (dist * dist),
                    };
                }
            }
            let proj = projections.angle(a);
            let table = &table;
            let coords = &coords;
            vol.data
                .par_chunks_mut(plane)
                .enumerate()
                .for_each(|(z, slab)| {
                    let cz = coords[z];
                    for (voxel, col) in slab.iter_mut().zip(table.iter()) {
                        let cv = cz * col.v_scale + det_half;
                        let iv = cv.floor();
                        *voxel +=
                            col.weight * bilinear(proj, nd, iv as isize, cv - iv, col.iu, col.fu);
                    }
                });
        }
        Ok(vol)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ColumnProjection {
    iu: isize,
    fu: f64,
    v_scale: f64,
    weight: f64,
}

#[inline]
fn norm3(d: &[f64; 3]) -> f64 {
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Parameter interval of `o + t·d`, `t ∈ [0, 1]`, inside the cube `[lo, hi]³`.
fn clip_to_box(o: &[f64; 3], d: &[f64; 3], lo: f64, hi: f64) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..3 {
        if d[k].abs() < 1e-300 {
            if o[k] < lo || o[k] > hi {
                return None;
            }
        } else {
            let inv = 1.0 / d[k];
            let (mut ta, mut tb) = ((lo - o[k]) * inv, (hi - o[k]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
    }
    (t1 > t0).then_some((t0, t1))
}

/// Trilinear interpolation on index coordinates, zero outside the grid.
#[inline]
pub(crate) fn trilinear(data: &[f64], n: usize, x: f64, y: f64, z: f64) -> f64 {
    let (fx, fy, fz) = (x.floor(), y.floor(), z.floor());
    let (ix, iy, iz) = (fx as isize, fy as isize, fz as isize);
    let (wx, wy, wz) = (x - fx, y - fy, z - fz);
    let ni = n as isize;
    if ix >= 0 && iy >= 0 && iz >= 0 && ix + 1 < ni && iy + 1 < ni && iz + 1 < ni {
        let (ix, iy, iz) = (ix as usize, iy as usize, iz as usize);
        let base = (iz * n + iy) * n + ix;
        let p = n * n;
        let c00 = data[base] * (1.0 - wx) + data[base + 1] * wx;
        let c01 = data[base + n] * (1.0 - wx) + data[base + n + 1] * wx;
        let c10 = data[base + p] * (1.0 - wx) + data[base + p + 1] * wx;
        let c11 = data[base + p + n] * (1.0 - wx) + data[base + p + n + 1] * wx;
        let c0 = c00 * (1.0 - wy) + c01 * wy;
        let c1 = c10 * (1.0 - wy) + c11 * wy;
        return c0 * (1.0 - wz) + c1 * wz;
    }
    let at = |dz: isize, dy: isize, dx: isize| -> f64 {
        let (xx, yy, zz) = (ix + dx, iy + dy, iz + dz);
        if xx < 0 || yy < 0 || zz < 0 || xx >= ni || yy >= ni || zz >= ni {
            0.0
        } else {
            data[((zz as usize) * n + yy as usize) * n + xx as usize]
        }
    };
    let c0 = (at(0, 0, 0) * (1.0 - wx) + at(0, 0, 1) * wx) * (1.0 - wy)
        + (at(0, 1, 0) * (1.0 - wx) + at(0, 1, 1) * wx) * wy;
    let c1 = (at(1, 0, 0) * (1.0 - wx) + at(1, 0, 1) * wx) * (1.0 - wy)
        + (at(1, 1, 0) * (1.0 - wx) + at(1, 1, 1) * wx) * wy;
    c0 * (1.0 - wz) + c1 * wz
}

/// Bilinear interpolation on an `nd × nd` image, zero outside.
#[inline]
pub(crate) fn bilinear(img: &[f64], nd: usize, iv: isize, fv: f64, iu: isize, fu: f64) -> f64 {
    let n = nd as isize;
    if iv < -1 || iu < -1 || iv >= n || iu >= n {
        return 0.0;
    }
    if iv >= 0 && iu >= 0 && iv + 1 < n && iu + 1 < n {
        let b = iv as usize * nd + iu as usize;
        let top = img[b] * (1.0 - fu) + img[b + 1] * fu;
        let bot = img[b + nd] * (1.0 - fu) + img[b + nd + 1] * fu;
        return top * (1.0 - fv) + bot * fv;
    }
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= n || c >= n {
            0.0
        } else {
            img[r as usize * nd + c as usize]
        }
    };
    (at(iv, iu) * (1.0 - fu) + at(iv, iu + 1) * fu) * (1.0 - fv)
        + (at(iv + 1, iu) * (1.0 - fu) + at(iv + 1, iu + 1) * fu) * fv
}
