//! Training-set construction and Levenberg-Marquardt fitting of the network.
//!
//! Parameter vectors follow the [`NetworkParams::to_vector`] ordering
//! `[h_e¹…h_e^{N_h}, b₁…b_{N_h}, ξ₁…ξ_{N_h}, b_o]`, which is also the column
//! order of [`jacobian`].

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdk::ExpBinning;
use crate::geometry::{Mask, ProjectionData, Volume};
use crate::nnfdk::{compute_features, sigmoid, NetworkParams, OutputScaling};
use crate::projector::Projector;

/// Voxels below this fraction of the peak magnitude do not seed the ROI.
pub const ROI_THRESHOLD: f64 = 0.05;
pub const ROI_BUFFER: f64 = 0.2;

/// `|x| > τ·max|x|`, box-dilated by `⌈0.2·N⌉` voxels.
pub fn roi_mask(hq: &Volume) -> Result<Mask> {
    if !hq.is_finite() {
        return Err(Error::InvalidArgument("non-finite reference volume".into()));
    }
    let peak = hq.max_abs();
    if peak == 0.0 {
        return Err(Error::EmptyRoi);
    }
    let seed = Mask::from_fn(hq, |v| v.abs() > ROI_THRESHOLD * peak);
    let radius = (ROI_BUFFER * hq.n as f64).ceil() as usize;
    Ok(dilate_box(&seed, radius))
}

/// Separable box dilation with half-width `radius`.
pub fn dilate_box(mask: &Mask, radius: usize) -> Mask {
    let n = mask.n;
    let mut cur = mask.data.clone();
    for (stride_a, stride_b, stride_c) in [(n * n, n, 1), (n * n, 1, n), (n, 1, n * n)] {
        let mut next = vec![false; cur.len()];
        for a in 0..n {
            for b in 0..n {
                let base = a * stride_a + b * stride_b;
                // Running count of set voxels inside the window.
                let mut prefix = vec![0usize; n + 1];
                for c in 0..n {
                    prefix[c + 1] = prefix[c] + cur[base + c * stride_c] as usize;
                }
                for c in 0..n {
                    let lo = c.saturating_sub(radius);
                    let hi = (c + radius + 1).min(n);
                    next[base + c * stride_c] = prefix[hi] > prefix[lo];
                }
            }
        }
        cur = next;
    }
    Mask { n, data: cur }
}

/// Feature rows `Z` (row-major, `len × n_features`) and scaled targets `O`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub n_features: usize,
    pub z: Vec<f64>,
    pub o: Vec<f64>,
}

impl TrainingSet {
    pub fn new(n_features: usize, z: Vec<f64>, o: Vec<f64>) -> Result<Self> {
        if z.len() != n_features * o.len() {
            return Err(Error::shape(n_features * o.len(), z.len()));
        }
        Ok(Self { n_features, z, o })
    }

    pub fn len(&self) -> usize {
        self.o.len()
    }

    pub fn is_empty(&self) -> bool {
        self.o.is_empty()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.z[j * self.n_features..(j + 1) * self.n_features]
    }

    fn push(&mut self, z: &[f64], o: f64) {
        self.z.extend_from_slice(z);
        self.o.push(o);
    }

    /// Per-feature `(min, max)` over all rows.
    pub fn feature_ranges(&self) -> Vec<(f64, f64)> {
        let mut r = vec![(f64::INFINITY, f64::NEG_INFINITY); self.n_features];
        for j in 0..self.len() {
            for (range, &v) in r.iter_mut().zip(self.row(j)) {
                range.0 = range.0.min(v);
                range.1 = range.1.max(v);
            }
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleBudget {
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
}

/// One projection stack with its high-quality reference.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub projections: ProjectionData,
    pub hq: Volume,
}

#[derive(Debug, Clone)]
pub struct TrainingData {
    pub train: TrainingSet,
    pub val: TrainingSet,
    pub scaling: OutputScaling,
    pub binning: ExpBinning,
}

fn split_evenly(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| total / parts + usize::from(i < total % parts))
        .collect()
}

/// Draws unique ROI voxels from each dataset.
///
/// With no validation datasets every training dataset is split into
/// disjoint training and validation pairs. Otherwise training pairs come
/// only from `train_sets` and validation pairs only from `val_sets`. Targets
/// are scaled with the range of the training targets.
pub fn build_sets(
    projector: &Projector,
    train_sets: &[Dataset],
    val_sets: &[Dataset],
    budget: SampleBudget,
    binning: &ExpBinning,
) -> Result<TrainingData> {
    if train_sets.is_empty() {
        return Err(Error::InvalidArgument("no training datasets".into()));
    }
    if budget.n_train == 0 || budget.n_val == 0 {
        return Err(Error::InvalidArgument(
            "sample budget must be positive".into(),
        ));
    }
    let n_e = binning.n_bins();
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut train = TrainingSet::new(n_e, Vec::new(), Vec::new())?;
    let mut val = train.clone();

    let split = val_sets.is_empty();
    let train_shares = split_evenly(budget.n_train, train_sets.len());
    let val_shares = if split {
        split_evenly(budget.n_val, train_sets.len())
    } else {
        split_evenly(budget.n_val, val_sets.len())
    };

    let mut draw =
        |ds: &Dataset, index: usize, n_t: usize, n_v: usize, rng: &mut ChaCha8Rng| -> Result<()> {
            let roi = roi_mask(&ds.hq)?.indices();
            let requested = n_t + n_v;
            if requested > roi.len() {
                return Err(Error::BudgetExceedsRoi {
                    dataset: index,
                    available: roi.len(),
                    requested,
                });
            }
            let features = compute_features(projector, &ds.projections, binning)?;
            let picks = sample(rng, roi.len(), requested);
            for (k, p) in picks.iter().enumerate() {
                let v = roi[p];
                let row = features.row(v);
                if k < n_t {
                    train.push(&row, ds.hq.data[v]);
                } else {
                    val.push(&row, ds.hq.data[v]);
                }
            }
            Ok(())
        };

    for (i, ds) in train_sets.iter().enumerate() {
        let n_v = if split { val_shares[i] } else { 0 };
        draw(ds, i, train_shares[i], n_v, &mut rng)?;
    }
    if !split {
        for (i, ds) in val_sets.iter().enumerate() {
            draw(ds, train_sets.len() + i, 0, val_shares[i], &mut rng)?;
        }
    }

    let (t_min, t_max) = train
        .o
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| {
            (lo.min(t), hi.max(t))
        });
    let scaling = OutputScaling::from_target_range(t_min, t_max);
    for t in train.o.iter_mut().chain(val.o.iter_mut()) {
        *t = scaling.scale_target(*t);
    }
    Ok(TrainingData {
        train,
        val,
        scaling,
        binning: binning.clone(),
    })
}

fn check_set(params: &NetworkParams, set: &TrainingSet) -> Result<()> {
    params.validate()?;
    if set.n_features != params.n_inputs() {
        return Err(Error::shape(
            format!("{} features", params.n_inputs()),
            format!("{} features", set.n_features),
        ));
    }
    Ok(())
}

/// `½ Σ_j (O_j − N_θ(Z_j))²` on scaled targets.
pub fn loss(params: &NetworkParams, set: &TrainingSet) -> Result<f64> {
    check_set(params, set)?;
    let sq: Vec<f64> = (0..set.len())
        .into_par_iter()
        .map(|j| {
            let d = set.o[j] - params.eval_scaled(set.row(j)).unwrap_or(f64::NAN);
            d * d
        })
        .collect();
    Ok(0.5 * sq.iter().sum::<f64>())
}

/// Writes `∂N_θ(z)/∂θ` into `out` and returns `N_θ(z)`.
fn gradient_row(params: &NetworkParams, z: &[f64], out: &mut [f64]) -> f64 {
    let (n_h, n_e) = (params.n_hidden, params.n_inputs());
    let s = &params.scaling;
    let mut hidden = vec![0.0; n_h];
    let mut acc = 0.0;
    for k in 0..n_h {
        let dot: f64 = z
            .iter()
            .zip(&params.hidden_filters[k].coeffs)
            .map(|(zi, hi)| (zi - s.in_shift) * s.in_scale * hi)
            .sum();
        hidden[k] = sigmoid(dot - params.hidden_biases[k]);
        acc += params.output_weights[k] * hidden[k];
    }
    let y = sigmoid(acc - params.output_bias);
    let dy = y * (1.0 - y);
    for k in 0..n_h {
        let g = dy * params.output_weights[k] * hidden[k] * (1.0 - hidden[k]);
        for (e, zi) in z.iter().enumerate() {
            out[k * n_e + e] = g * (zi - s.in_shift) * s.in_scale;
        }
        out[n_h * n_e + k] = -g;
        out[n_h * n_e + n_h + k] = dy * hidden[k];
    }
    out[n_h * (n_e + 2)] = -dy;
    y
}

/// `len × |θ|` Jacobian of the network outputs.
pub fn jacobian(params: &NetworkParams, set: &TrainingSet) -> Result<DMatrix<f64>> {
    check_set(params, set)?;
    Ok(jacobian_and_outputs(params, set).0)
}

fn jacobian_and_outputs(params: &NetworkParams, set: &TrainingSet) -> (DMatrix<f64>, Vec<f64>) {
    let p = params.n_params();
    let mut rows = vec![0.0; set.len() * p];
    let outputs: Vec<f64> = rows
        .par_chunks_mut(p)
        .enumerate()
        .map(|(j, row)| gradient_row(params, set.row(j), row))
        .collect();
    (DMatrix::from_row_slice(set.len(), p, &rows), outputs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmaConfig {
    pub lambda0: f64,
    pub factor: f64,
    /// Consecutive rejected updates before giving up.
    pub max_rejects: usize,
    /// Accepted iterations without validation improvement before stopping.
    pub patience: usize,
    pub gradient_floor: f64,
    pub lambda_ceiling: f64,
    pub max_iterations: usize,
}

impl Default for LmaConfig {
    fn default() -> Self {
        Self {
            lambda0: 1e5,
            factor: 10.0,
            max_rejects: 100,
            patience: 100,
            gradient_floor: 1e-10,
            lambda_ceiling: 1e20,
            max_iterations: 1000,
        }
    }
}

impl LmaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 1.0) || !(self.lambda0 > 0.0) || !(self.lambda_ceiling > 0.0) {
            return Err(Error::InvalidArgument(
                "LMA needs factor > 1 and positive lambda0 / ceiling".into(),
            ));
        }
        if self.max_rejects == 0 || self.patience == 0 || self.max_iterations == 0 {
            return Err(Error::InvalidArgument("LMA limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TooManyRejects,
    SmallGradient,
    LambdaCeiling,
    ValidationPatience,
    MaxIterations,
}

/// One proposed update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmaStep {
    pub iteration: usize,
    pub lambda: f64,
    pub accepted: bool,
    /// Training loss after the step if accepted, of the candidate otherwise.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    pub steps: Vec<LmaStep>,
    pub best_val_loss: f64,
    pub stop: StopReason,
}

impl TrainHistory {
    pub fn accepted_losses(&self) -> Vec<f64> {
        std::iter::once(self.initial_train_loss)
            .chain(
                self.steps
                    .iter()
                    .filter(|s| s.accepted)
                    .map(|s| s.train_loss),
            )
            .collect()
    }

    pub fn to_delimited(&self) -> String {
        let mut out = String::from("iteration\tlambda\taccepted\ttrain_loss\tval_loss\n");
        for s in &self.steps {
            let val = s.val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
            out.push_str(&format!(
                "{}\t{:e}\t{}\t{:e}\t{}\n",
                s.iteration, s.lambda, s.accepted as u8, s.train_loss, val
            ));
        }
        out
    }
}

/// Nguyen-Widrow hidden layer on range-normalized inputs, folded back into
/// raw-input weights. Output weights and bias are uniform in `[−0.5, 0.5]`.
pub fn nguyen_widrow<R: Rng>(
    binning: ExpBinning,
    n_hidden: usize,
    ranges: &[(f64, f64)],
    rng: &mut R,
) -> NetworkParams {
    let mut params = NetworkParams::zeros(binning, n_hidden);
    let n_e = params.n_inputs();
    let beta = 0.7 * (n_hidden as f64).powf(1.0 / n_e as f64);
    // z̃ = a·z + c maps [min, max] onto [−1, 1].
    let affine: Vec<(f64, f64)> = ranges
        .iter()
        .map(|&(lo, hi)| {
            if hi > lo && (hi - lo).is_finite() {
                let a = 2.0 / (hi - lo);
                (a, -1.0 - a * lo)
            } else {
                (0.0, 0.0)
            }
        })
        .collect();
    for k in 0..n_hidden {
        let mut w: Vec<f64> = (0..n_e).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = w
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        w.iter_mut().for_each(|v| *v *= beta / norm);
        let b: f64 = rng.random_range(-beta..beta);
        let shift: f64 = w.iter().zip(&affine).map(|(wi, (_, c))| wi * c).sum();
        params.hidden_filters[k].coeffs =
            w.iter().zip(&affine).map(|(wi, (a, _))| wi * a).collect();
        params.hidden_biases[k] = b - shift;
    }
    for v in params.output_weights.iter_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    params.output_bias = rng.random_range(-0.5..0.5);
    params
}

/// Levenberg-Marquardt from a Nguyen-Widrow start; returns the iterate with
/// the lowest validation loss.
pub fn train(
    data: &TrainingData,
    config: &LmaConfig,
    n_hidden: usize,
    seed: u64,
) -> Result<(NetworkParams, TrainHistory)> {
    if n_hidden == 0 {
        return Err(Error::InvalidArgument(
            "need at least one hidden node".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = nguyen_widrow(
        data.binning.clone(),
        n_hidden,
        &data.train.feature_ranges(),
        &mut rng,
    );
    init.scaling = data.scaling;
    train_from(init, &data.train, &data.val, config)
}

/// Levenberg-Marquardt from a given starting point.
pub fn train_from(
    init: NetworkParams,
    train_set: &TrainingSet,
    val_set: &TrainingSet,
    config: &LmaConfig,
) -> Result<(NetworkParams, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation sets must be nonempty".into(),
        ));
    }
    check_set(&init, train_set)?;
    check_set(&init, val_set)?;

    let p = init.n_params();
    let mut current = init;
    let mut theta = DVector::from_vec(current.to_vector());
    let initial_train_loss = loss(&current, train_set)?;
    let mut train_loss = initial_train_loss;
    let initial_val = loss(&current, val_set)?;
    let mut best = (current.clone(), initial_val);
    let mut lambda = config.lambda0;
    let mut since_improved = 0;
    let mut steps = Vec::new();
    let mut candidate = current.clone();

    let stop = 'outer: loop {
        let (jac, outputs) = jacobian_and_outputs(&current, train_set);
        let resid = DVector::from_iterator(
            train_set.len(),
            train_set.o.iter().zip(&outputs).map(|(o, y)| o - y),
        );
        let jtr = jac.tr_mul(&resid);
        if jtr.norm() < config.gradient_floor {
            break StopReason::SmallGradient;
        }
        let jtj = jac.tr_mul(&jac);
        let mut rejects = 0;
        loop {
            if steps.len() >= config.max_iterations {
                break 'outer StopReason::MaxIterations;
            }
            let mut lhs = jtj.clone();
            for d in 0..p {
                lhs[(d, d)] += lambda;
            }
            let proposal = lhs
                .cholesky()
                .map(|c| &theta + c.solve(&jtr))
                .filter(|t| t.iter().all(|v| v.is_finite()));
            let cand_loss = match proposal {
                Some(ref t) => {
                    candidate.set_vector(t.as_slice())?;
                    loss(&candidate, train_set)?
                }
                None => f64::INFINITY,
            };
            let iteration = steps.len();
            if cand_loss < train_loss {
                theta = proposal.expect("finite loss implies a proposal");
                std::mem::swap(&mut current, &mut candidate);
                train_loss = cand_loss;
                let val_loss = loss(&current, val_set)?;
                steps.push(LmaStep {
                    iteration,
                    lambda,
                    accepted: true,
                    train_loss,
                    val_loss: Some(val_loss),
                });
                lambda /= config.factor;
                if val_loss < best.1 {
                    best = (current.clone(), val_loss);
                    since_improved = 0;
                } else {
                    since_improved += 1;
                    if since_improved >= config.patience {
                        break 'outer StopReason::ValidationPatience;
                    }
                }
                break;
            }
            steps.push(LmaStep {
                iteration,
                lambda,
                accepted: false,
                train_loss: cand_loss,
                val_loss: None,
            });
            rejects += 1;
            lambda *= config.factor;
            if lambda > config.lambda_ceiling {
                break 'outer StopReason::LambdaCeiling;
            }
            if rejects >= config.max_rejects {
                break 'outer StopReason::TooManyRejects;
            }
        }
    };

    let history = TrainHistory {
        initial_train_loss,
        initial_val_loss: initial_val,
        steps,
        best_val_loss: best.1,
        stop,
    };
    Ok((best.0, history))
}
