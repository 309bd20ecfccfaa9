//! Levina–Bickel maximum-likelihood estimator.
//!
//! With `T_j(x)` the distance from `x` to its `j`-th neighbour, the local
//! estimate from `k` neighbours is
//!
//! ```text
//! m_k(x) = [ 1/(k-1) · Σ_{j<k} ln(T_k(x) / T_j(x)) ]⁻¹
//! ```
//!
//! Locals are aggregated over points, then averaged over `k ∈ [k_min, k]`.

use serde::{Deserialize, Serialize};

use super::{sorted_sum, EstimatorParams, MAX_EXCLUDED_FRACTION};
use crate::cloud::{Estimator, IdEstimate, NeighborTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `(1/N) Σ m_k(x)`
    MeanOfLocals,
    /// `[(1/N) Σ m_k(x)⁻¹]⁻¹`, the MacKay–Ghahramani correction.
    #[default]
    InverseMeanOfInverses,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleParams {
    pub k: usize,
    /// Lower end of the averaged k-range; equal to `k` for a single k.
    pub k_min: usize,
    pub aggregation: Aggregation,
}

impl Default for MleParams {
    fn default() -> Self {
        MleParams {
            k: 20,
            k_min: 10,
            aggregation: Aggregation::default(),
        }
    }
}

impl MleParams {
    pub fn single_k(k: usize) -> Self {
        MleParams {
            k,
            k_min: k,
            ..Default::default()
        }
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        if self.k_min < 2 || self.k_min > self.k {
            return Err(Error::config(format!(
                "MLE needs 2 <= k_min <= k, got k_min = {}, k = {}",
                self.k_min, self.k
            )));
        }
        if self.k >= n_points {
            return Err(Error::config(format!(
                "MLE k = {} must be at most N - 1 = {}",
                self.k,
                n_points.saturating_sub(1)
            )));
        }
        Ok(())
    }
}

pub fn mle_id(table: &NeighborTable, params: &MleParams) -> Result<IdEstimate> {
    let n = table.len();
    params.validate(n)?;
    if table.k() < params.k {
        return Err(Error::config(format!(
            "neighbour table holds k = {}, MLE needs {}",
            table.k(),
            params.k
        )));
    }

    let mut duplicates = 0usize;
    let mut equidistant = 0usize;
    let mut used = Vec::with_capacity(n);
    for i in 0..n {
        let t = table.distances(i);
        if t[0] == 0.0 {
            duplicates += 1;
        } else if t[params.k_min - 1] == t[0] {
            equidistant += 1;
        } else {
            used.push(i);
        }
    }

    let mut warnings = Vec::new();
    if duplicates > 0 {
        warnings.push(format!(
            "excluded {duplicates} point(s) with a zero-distance neighbour (exact duplicates)"
        ));
    }
    if equidistant > 0 {
        warnings.push(format!(
            "excluded {equidistant} point(s) whose first {} neighbours are equidistant",
            params.k_min
        ));
    }
    let excluded = duplicates + equidistant;
    if excluded as f64 > MAX_EXCLUDED_FRACTION * n as f64 {
        return Err(Error::Estimation(format!(
            "MLE excluded {excluded} of {n} points (limit {:.0}%)",
            MAX_EXCLUDED_FRACTION * 100.0
        )));
    }

    let mut per_point = Vec::with_capacity(used.len());
    let mut per_k = Vec::with_capacity(params.k - params.k_min + 1);
    for k in params.k_min..=params.k {
        per_point.clear();
        for &i in &used {
            let t = table.distances(i);
            let tk = t[k - 1];
            let s: f64 = t[..k - 1].iter().map(|&tj| (tk / tj).ln()).sum();
            // inverse local estimate: mean log ratio
            let inv = s / (k - 1) as f64;
            per_point.push(match params.aggregation {
                Aggregation::MeanOfLocals => 1.0 / inv,
                Aggregation::InverseMeanOfInverses => inv,
            });
        }
        let mean = sorted_sum(&mut per_point) / used.len() as f64;
        per_k.push(match params.aggregation {
            Aggregation::MeanOfLocals => mean,
            Aggregation::InverseMeanOfInverses => 1.0 / mean,
        });
    }
    let value = per_k.iter().sum::<f64>() / per_k.len() as f64;
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::Estimation(format!(
            "MLE produced a non-positive or non-finite value {value}"
        )));
    }

    Ok(IdEstimate {
        value,
        estimator: Estimator::Mle,
        params: Some(EstimatorParams::Mle(*params)),
        n_used: used.len(),
        warnings,
    })
}
