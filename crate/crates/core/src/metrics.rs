//! Reconstruction quality metrics and the shell/kernel segmentation.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mask, Volume};

pub const SSIM_WINDOW: usize = 19;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(recon: &Volume, hq: &Volume, roi: &Mask) -> Result<usize> {
    if recon.n != hq.n || recon.data.len() != hq.data.len() {
        return Err(Error::shape(hq.data.len(), recon.data.len()));
    }
    roi.check_len(hq.data.len())?;
    match roi.count() {
        0 => Err(Error::EmptyRoi),
        c => Ok(c),
    }
}

/// `‖mask(x_HQ − x)‖² / (2·N_ROI)`.
pub fn tse(recon: &Volume, hq: &Volume, roi: &Mask) -> Result<f64> {
    let count = check_pair(recon, hq, roi)?;
    let sum: f64 = recon
        .data
        .iter()
        .zip(&hq.data)
        .zip(&roi.data)
        .filter(|(_, &m)| m)
        .map(|((x, y), _)| (y - x) * (y - x))
        .sum();
    Ok(sum / (2.0 * count as f64))
}

/// Summed-area table with a zero first row and column.
fn integral(img: &[f64], n: usize) -> Vec<f64> {
    let m = n + 1;
    let mut s = vec![0.0; m * m];
    for r in 0..n {
        let mut row = 0.0;
        for c in 0..n {
            row += img[r * n + c];
            s[(r + 1) * m + c + 1] = s[r * m + c + 1] + row;
        }
    }
    s
}

/// Mean local SSIM over ROI voxels.
///
/// Windows are `19×19` within each axial slice, clipped at the slice border,
/// with sample (co)variances. The dynamic range is `max − min` of `hq`.
pub fn ssim(recon: &Volume, hq: &Volume, roi: &Mask) -> Result<f64> {
    let count = check_pair(recon, hq, roi)?;
    let (lo, hi) = hq
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let range = if hi > lo { hi - lo } else { 1.0 };
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let n = hq.n;
    let half = SSIM_WINDOW / 2;
    let m = n + 1;

    let per_slice: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|z| {
            let mask = &roi.data[z * n * n..(z + 1) * n * n];
            if !mask.iter().any(|&b| b) {
                return 0.0;
            }
            let x = recon.slice_z(z);
            let y = hq.slice_z(z);
            let prod =
                |f: &dyn Fn(usize) -> f64| integral(&(0..n * n).map(f).collect::<Vec<_>>(), n);
            let sx = integral(x, n);
            let sy = integral(y, n);
            let sxx = prod(&|i| x[i] * x[i]);
            let syy = prod(&|i| y[i] * y[i]);
            let sxy = prod(&|i| x[i] * y[i]);
            let mut acc = 0.0;
            for r in 0..n {
                let (r0, r1) = (r.saturating_sub(half), (r + half + 1).min(n));
                for c in 0..n {
                    if !mask[r * n + c] {
                        continue;
                    }
                    let (c0, c1_) = (c.saturating_sub(half), (c + half + 1).min(n));
                    let sum = |s: &[f64]| {
                        s[r1 * m + c1_] - s[r0 * m + c1_] - s[r1 * m + c0] + s[r0 * m + c0]
                    };
                    let np = ((r1 - r0) * (c1_ - c0)) as f64;
                    let (mx, my) = (sum(&sx) / np, sum(&sy) / np);
                    let cov = np / (np - 1.0);
                    let vx = cov * (sum(&sxx) / np - mx * mx);
                    let vy = cov * (sum(&syy) / np - my * my);
                    let vxy = cov * (sum(&sxy) / np - mx * my);
                    acc += ((2.0 * mx * my + c1) * (2.0 * vxy + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2));
                }
            }
            acc
        })
        .collect();
    Ok(per_slice.iter().sum::<f64>() / count as f64)
}

/// Separable Gaussian smoothing, kernel truncated at `3σ`, edge-clamped.
pub fn gaussian_smooth(volume: &Volume, sigma: f64) -> Volume {
    if sigma <= 0.0 {
        return volume.clone();
    }
    let n = volume.n;
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let mut cur = volume.data.clone();
    for stride in [1, n, n * n] {
        let src = cur;
        let mut dst = vec![0.0; src.len()];
        dst.par_iter_mut().enumerate().for_each(|(i, out)| {
            let pos = (i / stride % n) as isize;
            let base = i - pos as usize * stride;
            *out = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let p = (pos + k as isize - radius).clamp(0, n as isize - 1) as usize;
                    w * src[base + p * stride]
                })
                .sum();
        });
        cur = dst;
    }
    Volume { n, data: cur }
}

pub const HIST_BINS: usize = 256;
const HIST_SMOOTHING: f64 = 2.0;

/// Bin centers of the three highest local maxima of the smoothed histogram,
/// in increasing order.
pub fn histogram_peaks(values: &[f64]) -> Result<[f64; 3]> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if !(hi > lo) {
        return Err(Error::Segmentation(format!(
            "intensity range is empty ({lo}..{hi}); need three histogram peaks"
        )));
    }
    let width = (hi - lo) / HIST_BINS as f64;
    let mut hist = vec![0.0; HIST_BINS];
    for &v in values {
        hist[(((v - lo) / width) as usize).min(HIST_BINS - 1)] += 1.0;
    }
    let radius = (3.0 * HIST_SMOOTHING).ceil() as isize;
    let smooth: Vec<f64> = (0..HIST_BINS as isize)
        .map(|i| {
            (-radius..=radius)
                .filter_map(|d| {
                    let j = i + d;
                    (0..HIST_BINS as isize).contains(&j).then(|| {
                        hist[j as usize] * (-0.5 * (d as f64 / HIST_SMOOTHING).powi(2)).exp()
                    })
                })
                .sum()
        })
        .collect();
    let mut peaks: Vec<usize> = (0..HIST_BINS)
        .filter(|&i| {
            let left = if i == 0 { -1.0 } else { smooth[i - 1] };
            let right = if i + 1 == HIST_BINS {
                -1.0
            } else {
                smooth[i + 1]
            };
            smooth[i] > 0.0 && smooth[i] > left && smooth[i] >= right
        })
        .collect();
    if peaks.len() < 3 {
        return Err(Error::Segmentation(format!(
            "found {} histogram peaks, need 3",
            peaks.len()
        )));
    }
    peaks.sort_by(|&a, &b| smooth[b].total_cmp(&smooth[a]).then(a.cmp(&b)));
    let mut top = [peaks[0], peaks[1], peaks[2]];
    top.sort_unstable();
    Ok(top.map(|b| lo + (b as f64 + 0.5) * width))
}

/// Priority-flood watershed. Voxels with a nonzero marker seed their label;
/// ties in elevation are resolved in insertion order.
pub fn watershed(elevation: &Volume, markers: &[u32]) -> Result<Vec<u32>> {
    let n = elevation.n;
    if markers.len() != elevation.data.len() {
        return Err(Error::shape(elevation.data.len(), markers.len()));
    }
    let mut labels = markers.to_vec();
    let mut heap = BinaryHeap::new();
    let mut order = 0u64;
    let key = |v: f64| {
        Reverse(
            v.to_bits()
                ^ if v.is_sign_negative() {
                    u64::MAX
                } else {
                    1 << 63
                },
        )
    };
    for (i, &m) in markers.iter().enumerate() {
        if m != 0 {
            heap.push((key(elevation.data[i]), Reverse(order), i));
            order += 1;
        }
    }
    while let Some((_, _, i)) = heap.pop() {
        let (z, y, x) = (i / (n * n), i / n % n, i % n);
        for (dz, dy, dx) in NEIGHBORS_6 {
            let (zz, yy, xx) = (z as isize + dz, y as isize + dy, x as isize + dx);
            if [zz, yy, xx].iter().any(|&c| c < 0 || c >= n as isize) {
                continue;
            }
            let j = (zz as usize * n + yy as usize) * n + xx as usize;
            if labels[j] == 0 {
                labels[j] = labels[i];
                heap.push((
                    key(elevation.data[j].max(elevation.data[i])),
                    Reverse(order),
                    j,
                ));
                order += 1;
            }
        }
    }
    Ok(labels)
}

const NEIGHBORS_6: [(isize, isize, isize); 6] = [
    (-1, 0, 0),
    (1, 0, 0),
    (0, -1, 0),
    (0, 1, 0),
    (0, 0, -1),
    (0, 0, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Shell = 1,
    EmptySpace = 2,
    Kernel = 3,
}

impl Label {
    pub const ALL: [Label; 4] = [
        Label::Background,
        Label::Shell,
        Label::EmptySpace,
        Label::Kernel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Label::Background => "background",
            Label::Shell => "shell",
            Label::EmptySpace => "empty_space",
            Label::Kernel => "kernel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub n: usize,
    pub labels: Vec<Label>,
}

impl Segmentation {
    pub fn mask(&self, label: Label) -> Mask {
        Mask {
            n: self.n,
            data: self.labels.iter().map(|&l| l == label).collect(),
        }
    }

    /// Labels as a volume of `0..=3` values.
    pub fn to_volume(&self) -> Volume {
        Volume {
            n: self.n,
            data: self.labels.iter().map(|&l| l as u8 as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub sigma: f64,
    /// Half-width of the box opening applied to the kernel mask.
    pub kernel_opening: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            kernel_opening: 1,
        }
    }
}

fn erode_box(mask: &Mask, radius: usize) -> Mask {
    let inverted = Mask {
        n: mask.n,
        data: mask.data.iter().map(|b| !b).collect(),
    };
    let grown = crate::training::dilate_box(&inverted, radius);
    Mask {
        n: mask.n,
        data: grown.data.iter().map(|b| !b).collect(),
    }
}

/// Largest 6-connected component; the first one found wins ties.
fn largest_component(mask: &Mask) -> Mask {
    let n = mask.n;
    let mut comp = vec![0u32; mask.data.len()];
    let (mut best, mut best_size, mut next) = (0, 0, 0);
    let mut queue = VecDeque::new();
    for start in 0..mask.data.len() {
        if !mask.data[start] || comp[start] != 0 {
            continue;
        }
        next += 1;
        comp[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (z, y, x) = (i / (n * n), i / n % n, i % n);
            for (dz, dy, dx) in NEIGHBORS_6 {
                let (zz, yy, xx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                if [zz, yy, xx].iter().any(|&c| c < 0 || c >= n as isize) {
                    continue;
                }
                let j = (zz as usize * n + yy as usize) * n + xx as usize;
                if mask.data[j] && comp[j] == 0 {
                    comp[j] = next;
                    queue.push_back(j);
                }
            }
        }
        if size > best_size {
            best = next;
            best_size = size;
        }
    }
    Mask {
        n,
        data: comp.iter().map(|&c| c != 0 && c == best).collect(),
    }
}

/// Shell / empty space / kernel labelling of a shell-kernel object.
///
/// Histogram peaks give background < kernel < shell. Voxels between the
/// background/kernel and kernel/shell midpoints form the kernel candidates,
/// cleaned by an opening and reduced to the largest component. Shell voxels
/// lie above the background/shell midpoint next to voxels above the
/// kernel/shell midpoint. A watershed on the shell mask, seeded at the volume
/// border and at the kernel peak, yields the interior enclosed by the shell.
pub fn segment(recon: &Volume, config: &SegmentConfig) -> Result<Segmentation> {
    if !recon.is_finite() {
        return Err(Error::Segmentation("volume holds non-finite values".into()));
    }
    let n = recon.n;
    let smooth = gaussian_smooth(recon, config.sigma);
    let [bg, kernel_peak, shell_peak] = histogram_peaks(&smooth.data)?;
    let t_low = 0.5 * (bg + kernel_peak);
    let t_high = 0.5 * (kernel_peak + shell_peak);

    let t_mid = 0.5 * (bg + shell_peak);
    let dilate = crate::training::dilate_box;
    let and = |a: &Mask, b: &Mask| Mask {
        n,
        data: a.data.iter().zip(&b.data).map(|(x, y)| *x && *y).collect(),
    };

    let candidate = Mask::from_fn(&smooth, |v| v > t_low && v <= t_high);
    let r = config.kernel_opening;
    let core_kernel = largest_component(&dilate(&erode_box(&candidate, r), r));
    let kernel = and(&candidate, &dilate(&core_kernel, r));
    // Shell edge voxels fall below the kernel/shell midpoint, so the shell
    // grows from its core down to the background/shell midpoint.
    let near_core = dilate(&Mask::from_fn(&smooth, |v| v > t_high), 1);
    let shell = Mask {
        n,
        data: (0..n * n * n)
            .map(|i| near_core.data[i] && smooth.data[i] > t_mid && !kernel.data[i])
            .collect(),
    };
    let seed = (0..kernel.data.len())
        .filter(|&i| kernel.data[i])
        .max_by(|&a, &b| smooth.data[a].total_cmp(&smooth.data[b]).then(b.cmp(&a)))
        .ok_or_else(|| Error::Segmentation("no kernel voxels between the thresholds".into()))?;

    let mut markers = vec![0u32; n * n * n];
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                if [z, y, x].iter().any(|&c| c == 0 || c == n - 1) {
                    let i = (z * n + y) * n + x;
                    if !shell.data[i] {
                        markers[i] = 1;
                    }
                }
            }
        }
    }
    if markers[seed] != 0 {
        return Err(Error::Segmentation(
            "kernel touches the volume border".into(),
        ));
    }
    markers[seed] = 2;
    let elevation = Volume {
        n,
        data: shell.data.iter().map(|&b| b as u8 as f64).collect(),
    };
    let basins = watershed(&elevation, &markers)?;

    let labels: Vec<Label> = (0..n * n * n)
        .map(|i| {
            if shell.data[i] {
                Label::Shell
            } else if basins[i] == 2 {
                if kernel.data[i] {
                    Label::Kernel
                } else {
                    Label::EmptySpace
                }
            } else {
                Label::Background
            }
        })
        .collect();
    if !labels.contains(&Label::EmptySpace) {
        return Err(Error::Segmentation("shell encloses no empty space".into()));
    }
    Ok(Segmentation { n, labels })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub v_err: f64,
    pub ml_err: f64,
    pub dice: f64,
}

/// Volume error, misclassification error and Dice of `seg` against `gold`.
pub fn seg_metrics(seg: &Mask, gold: &Mask) -> Result<SegMetrics> {
    gold.check_len(seg.data.len())?;
    let (mut s, mut g, mut both, mut diff) = (0usize, 0usize, 0usize, 0usize);
    for (&a, &b) in seg.data.iter().zip(&gold.data) {
        s += a as usize;
        g += b as usize;
        both += (a && b) as usize;
        diff += (a != b) as usize;
    }
    if g == 0 {
        return Err(Error::InvalidArgument("gold class is empty".into()));
    }
    Ok(SegMetrics {
        v_err: (s as f64 - g as f64) / g as f64,
        ml_err: diff as f64 / g as f64,
        dice: 2.0 * both as f64 / (s + g) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantoms::{generate_spec, rasterize, Family};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(n: usize, rng: &mut ChaCha8Rng) -> Volume {
        Volume::from_vec(n, (0..n * n * n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn random_mask(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Mask {
        Mask {
            n,
            data: (0..n * n * n).map(|_| rng.random_bool(p)).collect(),
        }
    }

    #[test]
    fn identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_volume(16, &mut rng);
        let roi = random_mask(16, 0.5, &mut rng);
        assert_eq!(tse(&x, &x, &roi).unwrap(), 0.0);
        assert_eq!(ssim(&x, &x, &roi).unwrap(), 1.0);
        let m = random_mask(16, 0.3, &mut rng);
        let s = seg_metrics(&m, &m).unwrap();
        assert_eq!((s.v_err, s.ml_err, s.dice), (0.0, 0.0, 1.0));
    }

    #[test]
    fn empty_roi_is_rejected() {
        let x = Volume::zeros(4);
        assert!(matches!(tse(&x, &x, &Mask::empty(4)), Err(Error::EmptyRoi)));
        assert!(matches!(
            ssim(&x, &x, &Mask::empty(4)),
            Err(Error::EmptyRoi)
        ));
    }

    #[test]
    fn tse_of_constant_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_volume(8, &mut rng);
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| *v += 0.25);
        let t = tse(&x, &y, &Mask::full(8)).unwrap();
        assert!((t - 0.03125).abs() < 1e-15);
    }

    #[test]
    fn tse_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, y) = (random_volume(16, &mut rng), random_volume(16, &mut rng));
        let roi = random_mask(16, 0.4, &mut rng);
        let mut sum = 0.0;
        let mut count = 0.0;
        for i in 0..x.data.len() {
            if roi.data[i] {
                sum += (x.data[i] - y.data[i]).powi(2);
                count += 1.0;
            }
        }
        assert!((tse(&x, &y, &roi).unwrap() - sum / (2.0 * count)).abs() <= 1e-12);
    }

    fn brute_ssim(x: &Volume, y: &Volume, roi: &Mask) -> f64 {
        let n = x.n;
        let (lo, hi) = y
            .data
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let (c1, c2) = ((0.01 * (hi - lo)).powi(2), (0.03 * (hi - lo)).powi(2));
        let mut total = 0.0;
        let mut count = 0.0;
        for z in 0..n {
            for r in 0..n {
                for c in 0..n {
                    if !roi.data[(z * n + r) * n + c] {
                        continue;
                    }
                    let mut xs = Vec::new();
                    let mut ys = Vec::new();
                    for rr in r.saturating_sub(9)..(r + 10).min(n) {
                        for cc in c.saturating_sub(9)..(c + 10).min(n) {
                            xs.push(x.get(z, rr, cc));
                            ys.push(y.get(z, rr, cc));
                        }
                    }
                    let k = xs.len() as f64;
                    let mx = xs.iter().sum::<f64>() / k;
                    let my = ys.iter().sum::<f64>() / k;
                    let vx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / (k - 1.0);
                    let vy = ys.iter().map(|v| (v - my).powi(2)).sum::<f64>() / (k - 1.0);
                    let cxy = xs
                        .iter()
                        .zip(&ys)
                        .map(|(a, b)| (a - mx) * (b - my))
                        .sum::<f64>()
                        / (k - 1.0);
                    total += (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                        / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1.0;
                }
            }
        }
        total / count
    }

    #[test]
    fn ssim_matches_direct_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3 {
            let (x, y) = (random_volume(16, &mut rng), random_volume(16, &mut rng));
            let roi = random_mask(16, 0.3, &mut rng);
            let got = ssim(&x, &y, &roi).unwrap();
            assert!((got - brute_ssim(&x, &y, &roi)).abs() <= 1e-10);
        }
    }

    #[test]
    fn ssim_of_flat_pair_is_luminance_term() {
        // Flat recon against a reference whose range sets the constants.
        let n = 8;
        let mut hq = Volume::zeros(n);
        hq.data.fill(0.5);
        hq.data[0] = 0.0;
        hq.data[1] = 1.0;
        let mut x = Volume::zeros(n);
        x.data.fill(0.2);
        let mut roi = Mask::empty(n);
        let centre = hq.index(4, 4, 4);
        roi.data[centre] = true;
        // The window around (4,4,4) covers the whole z=4 slice, which is flat
        // in both volumes.
        let c1: f64 = 0.01f64.powi(2);
        let expect = (2.0 * 0.2 * 0.5 + c1) / (0.04 + 0.25 + c1);
        assert!((ssim(&x, &hq, &roi).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn seg_metrics_of_disjoint_sets() {
        let mut a = Mask::empty(4);
        let mut b = Mask::empty(4);
        a.data[..10].iter_mut().for_each(|v| *v = true);
        b.data[20..30].iter_mut().for_each(|v| *v = true);
        let s = seg_metrics(&a, &b).unwrap();
        assert_eq!((s.v_err, s.ml_err, s.dice), (0.0, 2.0, 0.0));
        assert!(seg_metrics(&a, &Mask::empty(4)).is_err());
    }

    #[test]
    fn seg_metrics_match_set_arithmetic() {
        use std::collections::BTreeSet;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let a = random_mask(16, 0.3, &mut rng);
            let b = random_mask(16, 0.4, &mut rng);
            let sa: BTreeSet<usize> = a.indices().into_iter().collect();
            let sb: BTreeSet<usize> = b.indices().into_iter().collect();
            let g = sb.len() as f64;
            let s = seg_metrics(&a, &b).unwrap();
            assert_eq!(s.v_err, (sa.len() as f64 - g) / g);
            assert_eq!(s.ml_err, sa.symmetric_difference(&sb).count() as f64 / g);
            assert_eq!(
                s.dice,
                2.0 * sa.intersection(&sb).count() as f64 / (sa.len() as f64 + g)
            );
            assert!(s.ml_err >= s.v_err.abs());
        }
    }

    #[test]
    fn smoothing_preserves_constants_and_mass_in_interior() {
        let mut v = Volume::zeros(12);
        v.data.fill(2.0);
        assert!(gaussian_smooth(&v, 1.0)
            .data
            .iter()
            .all(|x| (x - 2.0).abs() < 1e-12));
        let mut d = Volume::zeros(12);
        let c = d.index(6, 6, 6);
        d.data[c] = 1.0;
        let s = gaussian_smooth(&d, 1.0);
        assert!((s.data.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(s.get(6, 6, 5), s.get(6, 5, 6));
    }

    #[test]
    fn histogram_finds_three_modes() {
        let mut vals = vec![0.0; 5000];
        vals.extend(std::iter::repeat_n(0.5, 1000));
        vals.extend(std::iter::repeat_n(1.0, 2000));
        let p = histogram_peaks(&vals).unwrap();
        assert!(p[0] < 0.01 && (p[1] - 0.5).abs() < 0.01 && p[2] > 0.99);
        assert!(histogram_peaks(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn uniform_volume_fails_cleanly() {
        let v = Volume::zeros(16);
        match segment(&v, &SegmentConfig::default()) {
            Err(Error::Segmentation(msg)) => assert!(msg.contains("peak")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn watershed_separates_enclosed_basin() {
        let n = 9;
        let mut elev = Volume::zeros(n);
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let d = [z, y, x].iter().map(|&c| c.abs_diff(4)).max().unwrap();
                    if d == 2 {
                        let i = elev.index(z, y, x);
                        elev.data[i] = 1.0;
                    }
                }
            }
        }
        let mut markers = vec![0; n * n * n];
        markers[0] = 1;
        markers[elev.index(4, 4, 4)] = 2;
        let labels = watershed(&elev, &markers).unwrap();
        let inner = labels.iter().filter(|&&l| l == 2).count();
        // 3³ core plus whatever part of the wall the inner basin claims.
        assert!(inner >= 27);
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let d = [z, y, x].iter().map(|&c| c.abs_diff(4)).max().unwrap();
                    let l = labels[elev.index(z, y, x)];
                    if d < 2 {
                        assert_eq!(l, 2);
                    } else if d > 2 {
                        assert_eq!(l, 1);
                    }
                }
            }
        }
    }

    #[test]
    fn segments_rasterized_shell_kernel() {
        let n = 64;
        let spec = generate_spec(Family::ShellKernel, 1);
        let vol = rasterize(&spec, n);
        let seg = segment(&vol, &SegmentConfig::default()).unwrap();
        let vs = spec.phys_size / n as f64;
        let c = |i: usize| (i as f64 + 0.5) * vs - 0.5 * spec.phys_size;
        let mut gold = vec![Label::Background; n * n * n];
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    gold[(z * n + y) * n + x] = match spec.object_at([c(x), c(y), c(z)]) {
                        Some(0) => Label::Shell,
                        Some(1) => Label::EmptySpace,
                        Some(_) => Label::Kernel,
                        None => Label::Background,
                    };
                }
            }
        }
        let gold = Segmentation { n, labels: gold };
        for l in [Label::Shell, Label::EmptySpace, Label::Kernel] {
            let m = seg_metrics(&seg.mask(l), &gold.mask(l)).unwrap();
            assert!(m.dice >= 0.95, "{} {:?}", l.name(), m);
        }
    }
}
