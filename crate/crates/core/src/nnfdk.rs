//! The NN-FDK network and reconstruction algorithm.
//!
//! A network with `N_h` hidden nodes maps a feature row `z ∈ R^{N_e}` to
//!
//! ```text
//! N_θ(z) = σ( Σ_k ξ_k σ(z·h_e^k − b_k) − b_o )
//! ```
//!
//! followed by an affine output unscaling. Because FDK is bilinear in data
//! and filter, running this per voxel on the feature volumes
//! `F_y E = [FDK(y, E e_j)]_j` gives the same result as [`reconstruct`], which
//! needs only one FDK per hidden node.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdk::{fdk_reweighted, reweight, BinnedFilter, ExpBinning};
use crate::geometry::{ProjectionData, Volume};
use crate::projector::Projector;

pub const NETWORK_FORMAT: &str = "nnfdk-network/1";

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Value-normalization metadata.
///
/// Inputs are mapped as `(z − in_shift)·in_scale` (identity by default, the
/// hidden filters absorb the feature scale). The network output `s ∈ (0, 1)`
/// maps to `out_min + s·(out_max − out_min)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputScaling {
    pub in_shift: f64,
    pub in_scale: f64,
    pub out_min: f64,
    pub out_max: f64,
}

impl Default for OutputScaling {
    fn default() -> Self {
        Self {
            in_shift: 0.0,
            in_scale: 1.0,
            out_min: 0.0,
            out_max: 1.0,
        }
    }
}

impl OutputScaling {
    /// Lower/upper scaled value assigned to the smallest/largest target.
    pub const MARGIN_LO: f64 = 0.05;
    pub const MARGIN_HI: f64 = 0.95;

    /// Output map sending `[t_min, t_max]` onto `[0.05, 0.95]`.
    pub fn from_target_range(t_min: f64, t_max: f64) -> Self {
        let range = if t_max > t_min {
            t_max - t_min
        } else {
            t_min.abs().max(1.0) * 1e-6
        };
        let span = range / (Self::MARGIN_HI - Self::MARGIN_LO);
        let out_min = t_min - Self::MARGIN_LO * span;
        Self {
            out_min,
            out_max: out_min + span,
            ..Self::default()
        }
    }

    #[inline]
    pub fn scale_target(&self, t: f64) -> f64 {
        (t - self.out_min) / (self.out_max - self.out_min)
    }

    #[inline]
    pub fn unscale_output(&self, s: f64) -> f64 {
        self.out_min + s * (self.out_max - self.out_min)
    }
}

/// Parameters θ of the NN-FDK network.
///
/// The flat parameter vector used by training and the Jacobian is ordered
/// `[h_e¹ … h_e^{N_h}, b₁ … b_{N_h}, ξ₁ … ξ_{N_h}, b_o]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub n_hidden: usize,
    pub hidden_filters: Vec<BinnedFilter>,
    pub hidden_biases: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
    pub scaling: OutputScaling,
    pub binning: ExpBinning,
}

impl NetworkParams {
    pub fn zeros(binning: ExpBinning, n_hidden: usize) -> Self {
        let n_e = binning.n_bins();
        Self {
            n_hidden,
            hidden_filters: vec![
                BinnedFilter {
                    coeffs: vec![0.0; n_e]
                };
                n_hidden
            ],
            hidden_biases: vec![0.0; n_hidden],
            output_weights: vec![0.0; n_hidden],
            output_bias: 0.0,
            scaling: OutputScaling::default(),
            binning,
        }
    }

    /// Uniform random parameters, filter coefficients in `±filter_scale`,
    /// everything else in `±1`.
    pub fn random<R: Rng>(
        binning: ExpBinning,
        n_hidden: usize,
        filter_scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(binning, n_hidden);
        for f in &mut p.hidden_filters {
            f.coeffs
                .iter_mut()
                .for_each(|c| *c = filter_scale * (2.0 * rng.random::<f64>() - 1.0));
        }
        for v in p
            .hidden_biases
            .iter_mut()
            .chain(p.output_weights.iter_mut())
        {
            *v = 2.0 * rng.random::<f64>() - 1.0;
        }
        p.output_bias = 2.0 * rng.random::<f64>() - 1.0;
        p
    }

    pub fn n_inputs(&self) -> usize {
        self.binning.n_bins()
    }

    /// `|θ| = (N_e + 2)·N_h + 1`.
    pub fn n_params(&self) -> usize {
        param_count(self.n_inputs(), self.n_hidden)
    }

    pub fn validate(&self) -> Result<()> {
        let n_e = self.n_inputs();
        let n_h = self.n_hidden;
        if n_h == 0 {
            return Err(Error::InvalidArgument(
                "network needs at least one hidden node".into(),
            ));
        }
        if self.hidden_filters.len() != n_h
            || self.hidden_biases.len() != n_h
            || self.output_weights.len() != n_h
            || self.hidden_filters.iter().any(|f| f.coeffs.len() != n_e)
        {
            return Err(Error::Format(format!(
                "network parameter shapes do not match N_h={n_h}, N_e={n_e}"
            )));
        }
        if !self.to_vector().iter().all(|v| v.is_finite()) {
            return Err(Error::Format("network parameters must be finite".into()));
        }
        let s = &self.scaling;
        if !(s.out_max > s.out_min && s.in_scale.is_finite() && s.in_shift.is_finite()) {
            return Err(Error::Format("invalid value scaling".into()));
        }
        Ok(())
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for f in &self.hidden_filters {
            v.extend_from_slice(&f.coeffs);
        }
        v.extend_from_slice(&self.hidden_biases);
        v.extend_from_slice(&self.output_weights);
        v.push(self.output_bias);
        v
    }

    pub fn set_vector(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::shape(self.n_params(), theta.len()));
        }
        let n_e = self.n_inputs();
        let n_h = self.n_hidden;
        for (k, f) in self.hidden_filters.iter_mut().enumerate() {
            f.coeffs.copy_from_slice(&theta[k * n_e..(k + 1) * n_e]);
        }
        let base = n_h * n_e;
        self.hidden_biases.copy_from_slice(&theta[base..base + n_h]);
        self.output_weights
            .copy_from_slice(&theta[base + n_h..base + 2 * n_h]);
        self.output_bias = theta[base + 2 * n_h];
        Ok(())
    }

    /// Hidden filters and biases acting on raw (unshifted, unscaled) features.
    fn effective_hidden(&self) -> (Vec<BinnedFilter>, Vec<f64>) {
        let s = &self.scaling;
        let filters = self
            .hidden_filters
            .iter()
            .map(|f| BinnedFilter {
                coeffs: f.coeffs.iter().map(|c| c * s.in_scale).collect(),
            })
            .collect();
        let biases = self
            .hidden_filters
            .iter()
            .zip(&self.hidden_biases)
            .map(|(f, b)| b + s.in_shift * s.in_scale * f.coeffs.iter().sum::<f64>())
            .collect();
        (filters, biases)
    }

    /// Network output in `(0, 1)`, before unscaling.
    pub fn eval_scaled(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.n_inputs() {
            return Err(Error::shape(
                format!("{} features", self.n_inputs()),
                format!("{} features", z.len()),
            ));
        }
        let s = &self.scaling;
        let mut acc = 0.0;
        for k in 0..self.n_hidden {
            let dot: f64 = z
                .iter()
                .zip(&self.hidden_filters[k].coeffs)
                .map(|(zi, hi)| (zi - s.in_shift) * s.in_scale * hi)
                .sum();
            acc += self.output_weights[k] * sigmoid(dot - self.hidden_biases[k]);
        }
        Ok(sigmoid(acc - self.output_bias))
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            format: &'a str,
            network: &'a NetworkParams,
        }
        Ok(serde_json::to_string_pretty(&Doc {
            format: NETWORK_FORMAT,
            network: self,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            format: String,
            network: NetworkParams,
        }
        let doc: Doc = serde_json::from_str(text)?;
        if doc.format != NETWORK_FORMAT {
            return Err(Error::Format(format!(
                "unsupported network format {:?} (expected {NETWORK_FORMAT})",
                doc.format
            )));
        }
        let mut p = doc.network;
        p.binning.rebuild_index()?;
        p.validate()?;
        Ok(p)
    }
}

pub fn param_count(n_inputs: usize, n_hidden: usize) -> usize {
    (n_inputs + 2) * n_hidden + 1
}

/// `N_θ(z)` in attenuation units.
pub fn eval_network(params: &NetworkParams, z: &[f64]) -> Result<f64> {
    Ok(params.scaling.unscale_output(params.eval_scaled(z)?))
}

/// The `N_e` FDK reconstructions `FDK(y, E e_j)`.
#[derive(Debug, Clone)]
pub struct FeatureVolumes {
    pub volumes: Vec<Volume>,
}

impl FeatureVolumes {
    pub fn n_features(&self) -> usize {
        self.volumes.len()
    }

    pub fn n_voxels(&self) -> usize {
        self.volumes.first().map_or(0, |v| v.data.len())
    }

    /// Feature row `(F_y E)_{v:}` of voxel `v`.
    pub fn row(&self, v: usize) -> Vec<f64> {
        self.volumes.iter().map(|vol| vol.data[v]).collect()
    }
}

pub fn compute_features(
    projector: &Projector,
    projections: &ProjectionData,
    binning: &ExpBinning,
) -> Result<FeatureVolumes> {
    let g = projector.geometry();
    if binning.n_detector != g.n_detector {
        return Err(Error::shape(
            format!("binning for N={}", g.n_detector),
            format!("binning for N={}", binning.n_detector),
        ));
    }
    let reweighted = reweight(projections, g)?;
    let volumes = (0..binning.n_bins())
        .map(|j| fdk_reweighted(projector, &reweighted, &binning.unit_filter(j)))
        .collect::<Result<_>>()?;
    Ok(FeatureVolumes { volumes })
}

/// NN-FDK reconstruction: one FDK per hidden node, combined voxelwise.
pub fn reconstruct(
    params: &NetworkParams,
    projector: &Projector,
    projections: &ProjectionData,
) -> Result<Volume> {
    params.validate()?;
    let g = projector.geometry();
    if params.binning.n_detector != g.n_detector {
        return Err(Error::shape(
            format!("network for N={}", g.n_detector),
            format!("network for N={}", params.binning.n_detector),
        ));
    }
    let reweighted = reweight(projections, g)?;
    let (filters, biases) = params.effective_hidden();
    let mut combined = vec![0.0; g.volume_len()];
    for k in 0..params.n_hidden {
        let filter = params.binning.expand(&filters[k])?;
        let hidden = fdk_reweighted(projector, &reweighted, &filter)?;
        let (xi, b) = (params.output_weights[k], biases[k]);
        combined
            .par_iter_mut()
            .zip(hidden.data.par_iter())
            .for_each(|(acc, h)| *acc += xi * sigmoid(h - b));
    }
    let scaling = params.scaling;
    let b_o = params.output_bias;
    combined
        .par_iter_mut()
        .for_each(|v| *v = scaling.unscale_output(sigmoid(*v - b_o)));
    Volume::from_vec(g.n_voxels, combined)
}
