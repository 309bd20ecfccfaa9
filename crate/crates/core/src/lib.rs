//! Intrinsic dimension estimation for point clouds of hidden representations.
//!
//! The crate is organised bottom-up:
//!
//! - [`cloud`]: domain types ([`PointCloud`], [`NeighborTable`], [`IdEstimate`],
//!   [`Trajectory`]) and activation flattening.
//! - [`knn`]: exact k-nearest-neighbour tables, blocked Gram kernel plus a naive oracle.
//! - [`estimators`]: the Levina–Bickel maximum-likelihood estimator and TwoNN.
//! - [`synth`]: point clouds of known intrinsic dimension.
//! - [`trajectory`] and [`correlation`]: analysis across denoising steps and prompts.
//! - [`io`]: the ATF tensor format, run manifests and CSV/JSON reports.

pub mod cloud;
pub mod correlation;
pub mod error;
pub mod estimators;
pub mod io;
pub mod knn;
pub mod synth;
pub mod trajectory;

pub use cloud::{
    flatten_activation, CloudTag, Estimator, IdEstimate, Layer, NeighborTable, PointCloud, Tensor,
    TensorData, Trajectory,
};
pub use error::{Error, Result};
