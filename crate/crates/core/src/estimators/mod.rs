//! Intrinsic-dimension estimators over a [`NeighborTable`].
//!
//! Both estimators depend only on ratios of neighbour distances, so they are
//! invariant to global scaling and to isometries of the cloud. Per-point
//! contributions are sorted before they are summed, which makes every
//! estimate independent of point order down to the last bit.

mod mle;
mod twonn;

pub use mle::{mle_id, Aggregation, MleParams};
pub use twonn::{twonn_id, TwonnParams, TwonnVariant};

use crate::cloud::{Estimator, IdEstimate, NeighborTable};
use crate::error::Result;

/// More than this fraction of excluded points fails the estimate.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorParams {
    Mle(MleParams),
    TwoNn(TwonnParams),
}

impl EstimatorParams {
    pub fn estimator(&self) -> Estimator {
        match self {
            EstimatorParams::Mle(_) => Estimator::Mle,
            EstimatorParams::TwoNn(_) => Estimator::TwoNn,
        }
    }

    /// Neighbours the table must hold for this estimator.
    pub fn required_k(&self) -> usize {
        match self {
            EstimatorParams::Mle(p) => p.k,
            EstimatorParams::TwoNn(_) => 2,
        }
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        match self {
            EstimatorParams::Mle(p) => p.validate(n_points),
            EstimatorParams::TwoNn(p) => p.validate(),
        }
    }
}

pub fn estimate(table: &NeighborTable, params: &EstimatorParams) -> Result<IdEstimate> {
    match params {
        EstimatorParams::Mle(p) => mle_id(table, p),
        EstimatorParams::TwoNn(p) => twonn_id(table, p),
    }
}

/// Order-independent sum: sorts a copy, then accumulates ascending.
pub(crate) fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}
