//! Pearson and Spearman correlation between prompt perplexity and intrinsic dimension.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::cloud::IdEstimate;
use crate::error::{Error, Result};

pub const MIN_PAIRS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPair {
    pub prompt_id: String,
    pub perplexity: f64,
    pub id_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub n: usize,
    /// Joined pairs, ordered by prompt id.
    pub pairs: Vec<CorrelationPair>,
}

fn check_series(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::input(format!(
            "series lengths differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < MIN_PAIRS {
        return Err(Error::input(format!(
            "correlation needs at least {MIN_PAIRS} pairs, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::input("correlation inputs must be finite"));
    }
    Ok(())
}

/// Sample Pearson correlation, two-pass in `f64`.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_series(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "a series has zero variance".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; tied values share the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = rank;
        }
        start = end;
    }
    out
}

/// Pearson correlation of mid-ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_series(xs, ys)?;
    pearson(&ranks(xs), &ranks(ys))
}

fn index_unique<'a>(
    entries: impl Iterator<Item = (&'a str, f64)>,
    what: &str,
) -> Result<BTreeMap<&'a str, f64>> {
    let mut map = BTreeMap::new();
    for (id, v) in entries {
        if map.insert(id, v).is_some() {
            return Err(Error::input(format!("duplicate prompt_id {id:?} in {what}")));
        }
    }
    Ok(map)
}

/// Inner-joins ID values and perplexities on prompt id and correlates them.
pub fn correlate_values(ids: &[(String, f64)], ppl: &[(String, f64)]) -> Result<CorrelationResult> {
    let id_map = index_unique(ids.iter().map(|(p, v)| (p.as_str(), *v)), "ID estimates")?;
    let ppl_map = index_unique(ppl.iter().map(|(p, v)| (p.as_str(), *v)), "perplexities")?;
    let pairs: Vec<CorrelationPair> = id_map
        .iter()
        .filter_map(|(&prompt_id, &id_value)| {
            ppl_map.get(prompt_id).map(|&perplexity| CorrelationPair {
                prompt_id: prompt_id.to_string(),
                perplexity,
                id_value,
            })
        })
        .collect();
    if pairs.len() < MIN_PAIRS {
        let shared: HashSet<_> = id_map.keys().filter(|k| ppl_map.contains_key(*k)).collect();
        return Err(Error::input(format!(
            "only {} prompt id(s) appear in both inputs, need {MIN_PAIRS}",
            shared.len()
        )));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.perplexity).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.id_value).collect();
    Ok(CorrelationResult {
        pearson_r: pearson(&xs, &ys)?,
        spearman_rho: spearman(&xs, &ys)?,
        n: pairs.len(),
        pairs,
    })
}

pub fn correlate_perplexity(
    ids: &[(String, IdEstimate)],
    ppl: &[(String, f64)],
) -> Result<CorrelationResult> {
    let values: Vec<(String, f64)> = ids.iter().map(|(p, e)| (p.clone(), e.value)).collect();
    correlate_values(&values, ppl)
}
