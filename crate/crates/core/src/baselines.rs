//! SIRT with a nonnegativity constraint (SIRT⁺).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{ProjectionData, Volume};
use crate::projector::{BackWeighting, Projector};

const WEIGHT_EPS: f64 = 1e-12;

/// Inverse row and column sums of the projector pair, `R = 1/(W·1)` and
/// `C = 1/(Wᵀ·1)`, with zero sums mapped to zero weight.
#[derive(Debug, Clone)]
pub struct SirtWeights {
    pub row: Vec<f64>,
    pub col: Vec<f64>,
}

impl SirtWeights {
    /// Costs one forward and one backprojection.
    pub fn compute(projector: &Projector) -> Result<Self> {
        let g = projector.geometry();
        let mut ones_vol = g.zero_volume();
        ones_vol.data.fill(1.0);
        let mut ones_proj = g.zero_projections();
        ones_proj.data.fill(1.0);
        let inv = |s: f64| if s > WEIGHT_EPS { 1.0 / s } else { 0.0 };
        let row = projector
            .forward_project(&ones_vol)?
            .data
            .into_iter()
            .map(inv)
            .collect();
        let col = projector
            .back_project(&ones_proj, BackWeighting::Transpose)?
            .data
            .into_iter()
            .map(inv)
            .collect();
        Ok(Self { row, col })
    }
}

#[derive(Debug, Clone)]
pub struct SirtResult {
    pub volume: Volume,
    /// `(iteration, ‖y − W x‖₂)` for the iterate entering that iteration.
    pub residuals: Vec<(usize, f64)>,
}

/// `x ← max(0, x + C·Wᵀ·R·(y − W x))`, starting from `x = 0`.
pub fn sirt_plus(
    projector: &Projector,
    projections: &ProjectionData,
    n_iter: usize,
    record_every: usize,
) -> Result<SirtResult> {
    let weights = SirtWeights::compute(projector)?;
    sirt_plus_with(projector, projections, &weights, n_iter, record_every)
}

/// SIRT⁺ with precomputed weights: exactly one forward and one
/// backprojection per iteration.
pub fn sirt_plus_with(
    projector: &Projector,
    projections: &ProjectionData,
    weights: &SirtWeights,
    n_iter: usize,
    record_every: usize,
) -> Result<SirtResult> {
    let g = projector.geometry();
    projections.check_geometry(g)?;
    if n_iter == 0 {
        return Err(Error::InvalidArgument(
            "SIRT needs at least one iteration".into(),
        ));
    }
    if weights.row.len() != projections.data.len() || weights.col.len() != g.volume_len() {
        return Err(Error::shape(
            "SIRT weights for this geometry",
            "other geometry",
        ));
    }
    let record_every = record_every.max(1);
    let mut x = g.zero_volume();
    let mut residuals = Vec::new();
    for it in 0..n_iter {
        let mut r = projector.forward_project(&x)?;
        let mut norm2 = 0.0;
        for ((ri, yi), wi) in r.data.iter_mut().zip(&projections.data).zip(&weights.row) {
            let d = yi - *ri;
            norm2 += d * d;
            *ri = wi * d;
        }
        if it % record_every == 0 || it + 1 == n_iter {
            residuals.push((it, norm2.sqrt()));
        }
        let update = projector.back_project(&r, BackWeighting::Transpose)?;
        x.data
            .par_iter_mut()
            .zip(update.data.par_iter().zip(weights.col.par_iter()))
            .for_each(|(xi, (ui, ci))| *xi = (*xi + ci * ui).max(0.0));
    }
    Ok(SirtResult {
        volume: x,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConeBeamGeometry;
    use crate::phantoms::{rasterize, PhantomObject, PhantomSpec, Pose, Shape};

    #[test]
    fn zero_data_stays_zero() {
        let g = ConeBeamGeometry::new(8, 4, 4.0, 10.0).unwrap();
        let p = Projector::new(g.clone()).unwrap();
        let res = sirt_plus(&p, &g.zero_projections(), 5, 1).unwrap();
        assert!(res.volume.data.iter().all(|&v| v == 0.0));
        assert!(sirt_plus(&p, &g.zero_projections(), 0, 1).is_err());
    }

    #[test]
    fn clamp_keeps_iterates_nonnegative() {
        let g = ConeBeamGeometry::new(8, 4, 4.0, 10.0).unwrap();
        let p = Projector::new(g.clone()).unwrap();
        let mut y = g.zero_projections();
        for (i, v) in y.data.iter_mut().enumerate() {
            *v = if i % 3 == 0 { -1.0 } else { 0.5 };
        }
        for n in 1..4 {
            let res = sirt_plus(&p, &y, n, 1).unwrap();
            assert!(res.volume.data.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn residual_decreases_on_ball() {
        let g = ConeBeamGeometry::new(32, 16, 4.0, 10.0).unwrap();
        let p = Projector::new(g.clone()).unwrap();
        let mut spec = PhantomSpec::empty(10.0);
        spec.objects.push(PhantomObject {
            shape: Shape::Ellipsoid {
                semi_axes: [3.0; 3],
            },
            pose: Pose::at([0.0; 3]),
            intensity: 1.0,
        });
        let y = p.forward_project(&rasterize(&spec, 32)).unwrap();
        let res = sirt_plus(&p, &y, 200, 1).unwrap();
        assert_eq!(res.residuals.len(), 200);
        for w in res.residuals.windows(2) {
            assert!(w[1].1 <= w[0].1 * (1.0 + 1e-6), "{:?}", w);
        }
        assert!(res.residuals[199].1 < 0.1 * res.residuals[0].1);
    }

    #[test]
    fn one_forward_and_one_back_per_iteration() {
        let g = ConeBeamGeometry::new(8, 4, 4.0, 10.0).unwrap();
        let p = Projector::new(g.clone()).unwrap();
        let w = SirtWeights::compute(&p).unwrap();
        let before = p.counts();
        sirt_plus_with(&p, &g.zero_projections(), &w, 7, 3).unwrap();
        let d = p.counts().since(&before);
        assert_eq!((d.forward, d.back), (7, 7));
    }
}
