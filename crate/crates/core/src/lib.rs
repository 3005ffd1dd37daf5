//! Circular cone-beam CT reconstruction.
//!
//! The crate covers the whole NN-FDK pipeline at configurable resolution:
//!
//! * [`geometry`]: acquisition geometry and the voxel/detector grids.
//! * [`projector`]: ray-driven forward projection and voxel-driven backprojection.
//! * [`fdk`]: reweighting, row filtering, FDK, classical filters and exponential binning.
//! * [`nnfdk`]: the two-layer perceptron network and the NN-FDK reconstruction.
//! * [`training`]: ROI selection, training-set construction and Levenberg-Marquardt fitting.
//! * [`phantoms`]: Fourshape / Defrise phantoms, data simulation and Poisson noise.
//! * [`baselines`]: SIRT with a nonnegativity clamp.
//! * [`metrics`]: TSE, SSIM and the shell/kernel segmentation pipeline.
//! * [`io`]: raw array containers with JSON sidecars.

pub mod baselines;
pub mod error;
pub mod fdk;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod nnfdk;
pub mod phantoms;
pub mod projector;
pub mod training;

pub use error::{Error, Result};
pub use fdk::{BinnedFilter, ExpBinning, Filter};
pub use geometry::{ConeBeamGeometry, Mask, ProjectionData, Volume};
pub use nnfdk::{FeatureVolumes, NetworkParams, OutputScaling};
pub use projector::{OpCounts, Projector};
