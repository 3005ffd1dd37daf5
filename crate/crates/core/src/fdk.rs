//! The FDK pipeline (reweighting, row filtering, weighted backprojection),
//! the classical ramp filters and the exponential binning of filters.
//!
//! A [`Filter`] has `2N` spatial taps, tap `k` acting at detector offset
//! `k − N`. Filtering a detector row is the linear convolution
//! `out[i] = Σ_j taps[N + i − j]·row[j]`, truncated to the row length.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConeBeamGeometry, ProjectionData, Volume};
use crate::projector::{BackWeighting, Projector};

/// Spatial-domain 1-D filter with `2N` taps, center at index `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub taps: Vec<f64>,
}

impl Filter {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.len() < 2 || taps.len() % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "filter must have an even number of taps, got {}",
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("filter taps must be finite".into()));
        }
        Ok(Self { taps })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            taps: vec![0.0; 2 * n],
        }
    }

    /// Half the tap count, i.e. the detector width the filter is built for.
    pub fn n(&self) -> usize {
        self.taps.len() / 2
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            taps: self.taps.iter().map(|t| alpha * t).collect(),
        }
    }
}

/// Ram-Lak (band-limited ramp) filter sampled at the detector pitch.
pub fn ramlak_filter(n: usize, pixel_size: f64) -> Result<Filter> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!("filter size N={n} < 4")));
    }
    let tau2 = pixel_size * pixel_size;
    let taps = (0..2 * n)
        .map(|k| {
            let off = k as i64 - n as i64;
            if off == 0 {
                1.0 / (4.0 * tau2)
            } else if off % 2 == 0 {
                0.0
            } else {
                -1.0 / ((off * off) as f64 * PI * PI * tau2)
            }
        })
        .collect();
    Filter::new(taps)
}

/// Ram-Lak filter apodized by a Hann window: the ramp response of the Ram-Lak
/// taps on the `2N`-point frequency grid is multiplied by
/// `0.5 + 0.5·cos(π ω/ω_max)` and transformed back.
pub fn hann_filter(n: usize, pixel_size: f64) -> Result<Filter> {
    let ramp = ramlak_filter(n, pixel_size)?;
    let len = 2 * n;
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|m| Complex::new(ramp.taps[(m + n) % len], 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (m, c) in buf.iter_mut().enumerate() {
        *c *= hann_window(m, len);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let taps = (0..len)
        .map(|k| buf[(k + n) % len].re / len as f64)
        .collect();
    Filter::new(taps)
}

/// Hann window value at DFT bin `m` of a length-`len` grid.
pub fn hann_window(m: usize, len: usize) -> f64 {
    let signed = if m <= len / 2 {
        m as f64
    } else {
        m as f64 - len as f64
    };
    // ω/ω_max with ω_max the Nyquist frequency.
    let rel = 2.0 * signed / len as f64;
    0.5 + 0.5 * (PI * rel).cos()
}

/// Multiplies each pixel by `d/√(d² + u² + v²)`, `d` the source–detector distance.
pub fn reweight(
    projections: &ProjectionData,
    geometry: &ConeBeamGeometry,
) -> Result<ProjectionData> {
    projections.check_geometry(geometry)?;
    let nd = geometry.n_detector;
    let d = geometry.source_to_detector();
    let weights: Vec<f64> = (0..nd * nd)
        .map(|i| {
            let (v, u) = (geometry.pixel_coord(i / nd), geometry.pixel_coord(i % nd));
            d / (d * d + u * u + v * v).sqrt()
        })
        .collect();
    let mut out = projections.clone();
    out.data
        .par_chunks_mut(nd * nd)
        .for_each(|img| img.iter_mut().zip(&weights).for_each(|(p, w)| *p *= w));
    Ok(out)
}

/// FFT-based row convolution engine for one filter.
struct RowConvolver {
    n: usize,
    spectrum: Vec<Complex<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl RowConvolver {
    fn new(filter: &Filter) -> Self {
        let n = filter.n();
        // Full linear convolution has 3N − 1 samples.
        let len = (3 * n).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let mut spectrum = vec![Complex::new(0.0, 0.0); len];
        for (s, &t) in spectrum.iter_mut().zip(&filter.taps) {
            s.re = t / len as f64;
        }
        fwd.process(&mut spectrum);
        Self {
            n,
            spectrum,
            fwd,
            inv,
        }
    }

    /// Convolves two rows at once by packing them into the real and
    /// imaginary parts (the filter is real).
    fn convolve_pair(
        &self,
        a: &mut [f64],
        b: Option<&mut [f64]>,
        buf: &mut [Complex<f64>],
        scratch: &mut [Complex<f64>],
    ) {
        let n = self.n;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (c, &x) in buf.iter_mut().zip(a.iter()) {
            c.re = x;
        }
        if let Some(b) = b.as_deref() {
            for (c, &x) in buf.iter_mut().zip(b.iter()) {
                c.im = x;
            }
        }
        self.fwd.process_with_scratch(buf, scratch);
        buf.iter_mut()
            .zip(&self.spectrum)
            .for_each(|(c, s)| *c *= s);
        self.inv.process_with_scratch(buf, scratch);
        for (i, x) in a.iter_mut().enumerate() {
            *x = buf[i + n].re;
        }
        if let Some(b) = b {
            for (i, x) in b.iter_mut().enumerate() {
                *x = buf[i + n].im;
            }
        }
    }

    fn scratch_len(&self) -> usize {
        self.fwd
            .get_inplace_scratch_len()
            .max(self.inv.get_inplace_scratch_len())
    }

    fn len(&self) -> usize {
        self.spectrum.len()
    }
}

/// Convolves every detector row (fixed angle and `v`) with `filter`.
pub fn filter_1d(projections: &ProjectionData, filter: &Filter) -> Result<ProjectionData> {
    let nd = projections.n_det;
    if filter.taps.len() != 2 * nd {
        return Err(Error::shape(
            format!("{} filter taps", 2 * nd),
            format!("{} filter taps", filter.taps.len()),
        ));
    }
    let conv = RowConvolver::new(filter);
    let mut out = projections.clone();
    out.data.par_chunks_mut(2 * nd).for_each_init(
        || {
            (
                vec![Complex::new(0.0, 0.0); conv.len()],
                vec![Complex::new(0.0, 0.0); conv.scratch_len()],
            )
        },
        |(buf, scratch), rows| {
            let (a, b) = rows.split_at_mut(nd.min(rows.len()));
            let b = (!b.is_empty()).then_some(b);
            conv.convolve_pair(a, b, buf, scratch);
        },
    );
    Ok(out)
}

/// `FDK(y, h) = Wᵀ(h ∗ r(y))` with FDK-weighted backprojection.
pub fn fdk(projector: &Projector, projections: &ProjectionData, filter: &Filter) -> Result<Volume> {
    let reweighted = reweight(projections, projector.geometry())?;
    fdk_reweighted(projector, &reweighted, filter)
}

/// FDK on data that has already been passed through [`reweight`].
pub fn fdk_reweighted(
    projector: &Projector,
    reweighted: &ProjectionData,
    filter: &Filter,
) -> Result<Volume> {
    let filtered = filter_1d(reweighted, filter)?;
    projector.record_filter();
    projector.back_project(&filtered, BackWeighting::Fdk)
}

/// Exponentially widening, piecewise-constant parameterization of a filter.
///
/// Bins are built on the tap offset from the center: the center tap forms its
/// own bin, the next [`ExpBinning::LINEAR_TAPS`] offsets get one bin each, and
/// from there the widths double (2, 4, 8, ...), the last bin being truncated
/// at the filter boundary. In mirrored mode the offsets `±k` share a bin; in
/// independent mode left and right get separate bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpBinning {
    pub n_detector: usize,
    pub mirrored: bool,
    /// Half-open tap ranges `[start, end)` belonging to each bin.
    pub bin_edges: Vec<Vec<(usize, usize)>>,
    #[serde(skip)]
    bin_of: Vec<usize>,
}

impl ExpBinning {
    pub const LINEAR_TAPS: usize = 3;

    /// Default (mirrored) binning.
    pub fn new(n: usize) -> Result<Self> {
        Self::with_mode(n, true)
    }

    pub fn with_mode(n: usize, mirrored: bool) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidArgument(format!("binning size N={n} < 4")));
        }
        // Offset bins [lo, hi] on |offset| ≥ 1 up to the longest side (N).
        let mut offset_bins = Vec::new();
        let mut lo = 1usize;
        let mut k = 0usize;
        while lo <= n {
            let width = if k < Self::LINEAR_TAPS {
                1
            } else {
                1 << (k - Self::LINEAR_TAPS + 1)
            };
            let hi = (lo + width - 1).min(n);
            offset_bins.push((lo, hi));
            lo = hi + 1;
            k += 1;
        }

        let center = n;
        let mut bin_edges = vec![vec![(center, center + 1)]];
        // Right side reaches offset N − 1, left side offset −N.
        let right = |&(lo, hi): &(usize, usize)| -> Option<(usize, usize)> {
            (lo < n).then(|| (center + lo, center + hi.min(n - 1) + 1))
        };
        let left =
            |&(lo, hi): &(usize, usize)| -> (usize, usize) { (center - hi, center - lo + 1) };
        if mirrored {
            for b in &offset_bins {
                let mut ranges = vec![left(b)];
                ranges.extend(right(b));
                bin_edges.push(ranges);
            }
        } else {
            for b in &offset_bins {
                bin_edges.push(vec![left(b)]);
            }
            for b in &offset_bins {
                if let Some(r) = right(b) {
                    bin_edges.push(vec![r]);
                }
            }
        }
        let mut binning = Self {
            n_detector: n,
            mirrored,
            bin_edges,
            bin_of: Vec::new(),
        };
        binning.rebuild_index()?;
        Ok(binning)
    }

    /// Recomputes the tap → bin lookup (needed after deserialization) and
    /// checks that the bins partition the taps.
    pub fn rebuild_index(&mut self) -> Result<()> {
        let len = 2 * self.n_detector;
        let mut bin_of = vec![usize::MAX; len];
        for (j, ranges) in self.bin_edges.iter().enumerate() {
            for &(s, e) in ranges {
                if s >= e || e > len {
                    return Err(Error::Format(format!("bin {j} has invalid range {s}..{e}")));
                }
                for slot in &mut bin_of[s..e] {
                    if *slot != usize::MAX {
                        return Err(Error::Format(format!("tap bins overlap in bin {j}")));
                    }
                    *slot = j;
                }
            }
        }
        if bin_of.iter().any(|&b| b == usize::MAX) {
            return Err(Error::Format("bins do not cover all taps".into()));
        }
        self.bin_of = bin_of;
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.bin_edges.len()
    }

    pub fn bin_of(&self, tap: usize) -> usize {
        self.bin_of[tap]
    }

    pub fn width(&self, bin: usize) -> usize {
        self.bin_edges[bin].iter().map(|(s, e)| e - s).sum()
    }

    /// `E h_e`: tap `i` takes the coefficient of its bin.
    pub fn expand(&self, binned: &BinnedFilter) -> Result<Filter> {
        if binned.coeffs.len() != self.n_bins() {
            return Err(Error::shape(
                format!("{} binned coefficients", self.n_bins()),
                binned.coeffs.len(),
            ));
        }
        Filter::new(self.bin_of.iter().map(|&b| binned.coeffs[b]).collect())
    }

    /// Expansion of the unit vector `e_j`.
    pub fn unit_filter(&self, j: usize) -> Filter {
        Filter {
            taps: self
                .bin_of
                .iter()
                .map(|&b| if b == j { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Per-bin average of a full filter (left inverse of [`ExpBinning::expand`]).
    pub fn bin_average(&self, filter: &Filter) -> Result<BinnedFilter> {
        if filter.taps.len() != 2 * self.n_detector {
            return Err(Error::shape(2 * self.n_detector, filter.taps.len()));
        }
        let mut sums = vec![0.0; self.n_bins()];
        for (t, &b) in filter.taps.iter().zip(&self.bin_of) {
            sums[b] += t;
        }
        Ok(BinnedFilter {
            coeffs: sums
                .iter()
                .enumerate()
                .map(|(j, s)| s / self.width(j) as f64)
                .collect(),
        })
    }
}

/// Coefficients `h_e` of an exponentially binned filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedFilter {
    pub coeffs: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(N²) "same"-mode convolution.
    fn naive_conv(row: &[f64], taps: &[f64]) -> Vec<f64> {
        let n = row.len();
        (0..n)
            .map(|i| (0..n).map(|j| taps[n + i - j] * row[j]).sum())
            .collect()
    }

    fn random_projections(na: usize, nd: usize, rng: &mut ChaCha8Rng) -> ProjectionData {
        let data = (0..na * nd * nd)
            .map(|_| rng.random::<f64>() - 0.3)
            .collect();
        ProjectionData::from_vec(na, nd, data).unwrap()
    }

    #[test]
    fn delta_filter_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random_projections(3, 8, &mut rng);
        let mut f = Filter::zeros(8);
        f.taps[8] = 2.5;
        let out = filter_1d(&y, &f).unwrap();
        for (a, b) in out.data.iter().zip(&y.data) {
            assert!((a - 2.5 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_row_returns_filter_window() {
        let n = 8;
        let mut y = ProjectionData::zeros(1, n);
        let j0 = 3;
        y.data[2 * n + j0] = 1.0;
        let taps: Vec<f64> = (0..2 * n).map(|k| k as f64 * 0.5 - 1.0).collect();
        let out = filter_1d(&y, &Filter::new(taps.clone()).unwrap()).unwrap();
        for i in 0..n {
            assert!((out.data[2 * n + i] - taps[n + i - j0]).abs() < 1e-12);
        }
        assert!(out.data[..2 * n].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn filter_matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &n in &[5usize, 16, 33] {
            let y = random_projections(3, n, &mut rng);
            let taps: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>() - 0.5).collect();
            let out = filter_1d(&y, &Filter::new(taps.clone()).unwrap()).unwrap();
            for r in 0..3 * n {
                let row = &y.data[r * n..(r + 1) * n];
                let want = naive_conv(row, &taps);
                let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for (g, w) in out.data[r * n..(r + 1) * n].iter().zip(&want) {
                    assert!((g - w).abs() <= 1e-10 * scale);
                }
            }
        }
    }

    #[test]
    fn filter_rejects_wrong_length() {
        let y = ProjectionData::zeros(1, 8);
        assert!(filter_1d(&y, &Filter::zeros(4)).is_err());
    }

    #[test]
    fn filtering_is_bit_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = random_projections(2, 12, &mut rng);
        let h = hann_filter(12, 0.3).unwrap();
        let a = filter_1d(&y, &h).unwrap();
        let b = filter_1d(&y, &h).unwrap();
        assert!(a
            .data
            .iter()
            .zip(&b.data)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn ramlak_center_tap_and_dc() {
        for &(n, pix) in &[(16usize, 0.1), (64, 0.25), (128, 1.0)] {
            let f = ramlak_filter(n, pix).unwrap();
            assert!((f.taps[n] - 1.0 / (4.0 * pix * pix)).abs() < 1e-12 / (pix * pix));
            let dc: f64 = f.taps.iter().sum();
            // Truncated 1/k² tail: DC ≈ 2/(π²·N·pix²).
            assert!(dc.abs() < 0.25 * f.taps[n] * 4.0 / n as f64, "{dc}");
        }
    }

    /// Direct DFT of the circularly arranged taps.
    fn naive_dft(taps: &[f64]) -> Vec<Complex<f64>> {
        let len = taps.len();
        let n = len / 2;
        (0..len)
            .map(|m| {
                (0..len).fold(Complex::new(0.0, 0.0), |acc, off| {
                    let t = taps[(off + n) % len];
                    let ph = -2.0 * PI * (m * off) as f64 / len as f64;
                    acc + Complex::new(t * ph.cos(), t * ph.sin())
                })
            })
            .collect()
    }

    #[test]
    fn hann_matches_direct_inverse_transform() {
        for &(n, pix) in &[(8usize, 0.5), (32, 0.2)] {
            let len = 2 * n;
            let ramp = ramlak_filter(n, pix).unwrap();
            let spec = naive_dft(&ramp.taps);
            // Discrete ramp response tracks |ω| (cycles/cm) away from the edges.
            for (m, s) in spec.iter().enumerate().take(n / 2).skip(1) {
                let omega = m as f64 / (len as f64 * pix);
                assert!((s.re * pix - omega).abs() < 0.1 * omega + 0.05 / pix);
            }
            let windowed: Vec<Complex<f64>> = spec
                .iter()
                .enumerate()
                .map(|(m, s)| s * hann_window(m, len))
                .collect();
            let h = hann_filter(n, pix).unwrap();
            let scale = h.taps[n].abs();
            for k in 0..len {
                let off = (k + len - n) % len;
                let val = (0..len).fold(0.0, |acc, m| {
                    let ph = 2.0 * PI * (m * off) as f64 / len as f64;
                    acc + windowed[m].re * ph.cos() - windowed[m].im * ph.sin()
                }) / len as f64;
                assert!((h.taps[k] - val).abs() <= 1e-10 * scale, "tap {k}");
            }
            // The window is 1 at DC, so the DC gain is the Ram-Lak one.
            let dc: f64 = h.taps.iter().sum();
            let ramp_dc: f64 = ramp.taps.iter().sum();
            assert!((dc - ramp_dc).abs() < 1e-10 * scale * len as f64);
        }
    }

    #[test]
    fn reweight_weights() {
        let g = ConeBeamGeometry::new(16, 2, 3.0, 10.0).unwrap();
        let mut y = g.zero_projections();
        y.data.iter_mut().for_each(|v| *v = 1.0);
        let r = reweight(&y, &g).unwrap();
        let d = g.source_to_detector();
        let um = g.pixel_coord(15);
        let corner = d / (d * d + 2.0 * um * um).sqrt();
        assert!((r.data[r.index(1, 15, 15)] - corner).abs() < 1e-14);
        assert!((r.data[r.index(0, 0, 0)] - corner).abs() < 1e-14);
        assert!(corner < 1.0);
        assert!(r.data.iter().all(|&w| w <= 1.0 && w >= corner - 1e-15));
        let z = reweight(&g.zero_projections(), &g).unwrap();
        assert!(z.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reweight_center_pixel_is_one() {
        // Odd detector so that a pixel sits on the central ray.
        let mut g = ConeBeamGeometry::new(15, 1, 3.0, 10.0).unwrap();
        g.n_detector = 15;
        let mut y = g.zero_projections();
        y.data.iter_mut().for_each(|v| *v = 1.0);
        let r = reweight(&y, &g).unwrap();
        assert_eq!(r.data[r.index(0, 7, 7)], 1.0);
    }

    #[test]
    fn n1024_binning_has_13_bins() {
        let b = ExpBinning::new(1024).unwrap();
        assert_eq!(b.n_bins(), 13);
    }

    #[test]
    fn binning_widths_enumerated() {
        // Offsets 0 | 1 | 2 | 3 | 4-5 | 6-9 | 10-17 | 18-33 | 34-64 (truncated).
        let b = ExpBinning::new(64).unwrap();
        assert_eq!(b.n_bins(), 9);
        let widths: Vec<usize> = (0..9).map(|j| b.width(j)).collect();
        assert_eq!(widths, vec![1, 2, 2, 2, 4, 8, 16, 32, 61]);
        let ind = ExpBinning::with_mode(64, false).unwrap();
        assert_eq!(ind.n_bins(), 1 + 8 + 8);
    }

    #[test]
    fn bins_partition_taps() {
        for &n in &[4usize, 5, 17, 64, 100, 1024] {
            for mirrored in [true, false] {
                let b = ExpBinning::with_mode(n, mirrored).unwrap();
                let total: usize = (0..b.n_bins()).map(|j| b.width(j)).sum();
                assert_eq!(total, 2 * n);
                // Per-side widths never shrink away from the center, except
                // for the truncated outermost bin.
                let side: Vec<usize> = b.bin_edges[1..]
                    .iter()
                    .filter(|r| r[0].0 < n)
                    .map(|r| r[0].1 - r[0].0)
                    .collect();
                for w in side.windows(2).take(side.len().saturating_sub(2)) {
                    assert!(w[1] >= w[0]);
                }
            }
        }
    }

    #[test]
    fn expand_unit_and_zero() {
        let b = ExpBinning::new(32).unwrap();
        let z = b
            .expand(&BinnedFilter {
                coeffs: vec![0.0; b.n_bins()],
            })
            .unwrap();
        assert!(z.taps.iter().all(|&t| t == 0.0));
        for j in 0..b.n_bins() {
            let mut c = vec![0.0; b.n_bins()];
            c[j] = 1.0;
            let f = b.expand(&BinnedFilter { coeffs: c }).unwrap();
            assert_eq!(f.taps.iter().filter(|&&t| t == 1.0).count(), b.width(j));
            assert_eq!(f, b.unit_filter(j));
        }
        assert!(b
            .expand(&BinnedFilter {
                coeffs: vec![1.0; 3]
            })
            .is_err());
    }

    #[test]
    fn expand_then_average_recovers_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mirrored in [true, false] {
            let b = ExpBinning::with_mode(48, mirrored).unwrap();
            let h = BinnedFilter {
                coeffs: (0..b.n_bins()).map(|_| rng.random::<f64>() - 0.5).collect(),
            };
            let back = b.bin_average(&b.expand(&h).unwrap()).unwrap();
            for (a, c) in back.coeffs.iter().zip(&h.coeffs) {
                assert!((a - c).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn binning_serialization_restores_index() {
        let b = ExpBinning::with_mode(20, false).unwrap();
        let text = serde_json::to_string(&b).unwrap();
        let mut back: ExpBinning = serde_json::from_str(&text).unwrap();
        back.rebuild_index().unwrap();
        assert_eq!(b, back);
    }

    fn ball_volume(g: &ConeBeamGeometry, radius: f64, mu: f64) -> Volume {
        let n = g.n_voxels;
        let mut v = g.zero_volume();
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let r2 = g.voxel_coord(x).powi(2)
                        + g.voxel_coord(y).powi(2)
                        + g.voxel_coord(z).powi(2);
                    if r2 <= radius * radius {
                        let i = v.index(z, y, x);
                        v.data[i] = mu;
                    }
                }
            }
        }
        v
    }

    #[test]
    fn fdk_recovers_ball_attenuation() {
        let g = ConeBeamGeometry::new(64, 64, 10.0, 10.0).unwrap();
        let p = Projector::new(g.clone()).unwrap();
        let truth = ball_volume(&g, 3.0, 0.22);
        let y = p.forward_project(&truth).unwrap();
        let rec = fdk(&p, &y, &hann_filter(64, g.pixel_size).unwrap()).unwrap();
        // Interior of the ball, away from the edge blur.
        let inner = ball_volume(&g, 2.0, 1.0);
        let (mut sum, mut cnt) = (0.0, 0.0);
        for (r, m) in rec.data.iter().zip(&inner.data) {
            if *m > 0.0 {
                sum += r;
                cnt += 1.0;
            }
        }
        let rel = (sum / cnt - 0.22).abs() / 0.22;
        // 2.6e-4 at first build.
        assert!(rel < 1e-3, "{rel}");
    }
}
