//! TwoNN: dimension from the ratio `μ = r₂/r₁` of the two nearest-neighbour
//! distances, whose distribution is `F(μ) = 1 − μ^{−d}` on a locally uniform
//! d-manifold.

use serde::{Deserialize, Serialize};

use super::{sorted_sum, EstimatorParams};
use crate::cloud::{Estimator, IdEstimate, NeighborTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwonnVariant {
    /// Zero-intercept least squares of `−ln(1 − F)` on `ln μ`.
    #[default]
    LinearFit,
    /// `d = n / Σ ln μᵢ`
    ClosedFormMl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwonnParams {
    /// Fraction of the largest μ left out of the linear fit.
    pub discard_fraction: f64,
    pub variant: TwonnVariant,
}

impl Default for TwonnParams {
    fn default() -> Self {
        TwonnParams {
            discard_fraction: 0.10,
            variant: TwonnVariant::LinearFit,
        }
    }
}

impl TwonnParams {
    pub fn closed_form() -> Self {
        TwonnParams {
            variant: TwonnVariant::ClosedFormMl,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.discard_fraction) {
            return Err(Error::config(format!(
                "TwoNN discard fraction must lie in [0, 0.5), got {}",
                self.discard_fraction
            )));
        }
        Ok(())
    }
}

fn degenerate() -> Error {
    Error::Estimation("degenerate lattice-like cloud: all neighbour ratios equal 1".into())
}

pub fn twonn_id(table: &NeighborTable, params: &TwonnParams) -> Result<IdEstimate> {
    params.validate()?;
    if table.k() < 2 {
        return Err(Error::config("TwoNN needs a neighbour table with k >= 2"));
    }
    let n = table.len();
    let mut log_mu: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n {
        let d = table.distances(i);
        if d[0] > 0.0 {
            log_mu.push((d[1] / d[0]).ln());
        }
    }
    let n_used = log_mu.len();
    let mut warnings = Vec::new();
    if n_used < n {
        warnings.push(format!(
            "excluded {} point(s) with a zero nearest-neighbour distance (exact duplicates)",
            n - n_used
        ));
    }
    if n_used < 3 {
        return Err(Error::Estimation(format!(
            "TwoNN needs at least 3 usable points, got {n_used}"
        )));
    }

    // sorted ascending from here on
    let sum_log = sorted_sum(&mut log_mu);
    let value = match params.variant {
        TwonnVariant::ClosedFormMl => {
            if sum_log == 0.0 {
                return Err(degenerate());
            }
            n_used as f64 / sum_log
        }
        TwonnVariant::LinearFit => {
            let kept = ((n_used as f64) * (1.0 - params.discard_fraction)).floor() as usize;
            // F = 1 at the largest μ; that point never enters the fit
            let kept = kept.clamp(1, n_used - 1);
            let mut sxx = 0.0;
            let mut sxy = 0.0;
            for (i, &x) in log_mu[..kept].iter().enumerate() {
                let f = (i + 1) as f64 / n_used as f64;
                let y = -(1.0 - f).ln();
                sxx += x * x;
                sxy += x * y;
            }
            if sxx == 0.0 {
                return Err(degenerate());
            }
            sxy / sxx
        }
    };
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::Estimation(format!(
            "TwoNN produced a non-positive or non-finite value {value}"
        )));
    }
    Ok(IdEstimate {
        value,
        estimator: Estimator::TwoNn,
        params: Some(EstimatorParams::TwoNn(*params)),
        n_used,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Table whose rows carry `(1, μᵢ)` as their two neighbour distances.
    fn ratio_table(mus: &[f64]) -> NeighborTable {
        let n = mus.len();
        let indices = (0..n).flat_map(|i| [(i + 1) % n, (i + 2) % n]).collect();
        let distances = mus.iter().flat_map(|&m| [1.0, m]).collect();
        NeighborTable::from_parts(2, indices, distances).unwrap()
    }

    #[test]
    fn closed_form_collapses_when_every_ratio_is_e() {
        let table = ratio_table(&[std::f64::consts::E; 50]);
        let est = twonn_id(&table, &TwonnParams::closed_form()).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.n_used, 50);
    }

    #[test]
    fn all_unit_ratios_are_degenerate() {
        let table = ratio_table(&[1.0; 20]);
        for params in [TwonnParams::default(), TwonnParams::closed_form()] {
            let err = twonn_id(&table, &params).unwrap_err();
            assert!(err.to_string().contains("degenerate lattice-like cloud"), "{err}");
        }
    }

    #[test]
    fn unit_ratio_is_legal_alongside_others() {
        let table = ratio_table(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let est = twonn_id(&table, &TwonnParams::closed_form()).unwrap();
        let expected = 5.0 / (2f64.ln() + 3f64.ln() + 4f64.ln() + 5f64.ln());
        assert!((est.value - expected).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_by_hand() {
        // n = 4, discard 0.1: floor(3.6) = 3 points, F = 1/4, 2/4, 3/4
        let mus = [4.0, 2.0, 8.0, 16.0];
        let table = ratio_table(&mus);
        let est = twonn_id(&table, &TwonnParams::default()).unwrap();
        let xs = [2f64.ln(), 4f64.ln(), 8f64.ln()];
        let ys = [-(0.75f64).ln(), -(0.5f64).ln(), -(0.25f64).ln()];
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        assert!((est.value - sxy / sxx).abs() < 1e-12);
    }

    #[test]
    fn duplicates_are_excluded_with_warning() {
        let n = 10;
        let indices = (0..n).flat_map(|i| [(i + 1) % n, (i + 2) % n]).collect();
        let mut distances: Vec<f64> = (0..n).flat_map(|i| [1.0, 1.5 + i as f64]).collect();
        distances[0] = 0.0;
        let table = NeighborTable::from_parts(2, indices, distances).unwrap();
        let est = twonn_id(&table, &TwonnParams::default()).unwrap();
        assert_eq!(est.n_used, 9);
        assert_eq!(est.warnings.len(), 1);
    }

    #[test]
    fn discard_fraction_range() {
        let table = ratio_table(&[2.0, 3.0, 4.0]);
        for f in [-0.1, 0.5, 0.9] {
            let params = TwonnParams { discard_fraction: f, ..Default::default() };
            assert!(matches!(twonn_id(&table, &params), Err(Error::Config(_))));
        }
        let zero = TwonnParams { discard_fraction: 0.0, ..Default::default() };
        assert!(twonn_id(&table, &zero).is_ok());
    }
}
