//! Shape of an ID-versus-denoising-step curve.

use serde::{Deserialize, Serialize};

use crate::cloud::Trajectory;
use crate::error::{Error, Result};

pub const DEFAULT_SMOOTH_WINDOW: usize = 3;
/// ID units.
pub const DEFAULT_REBOUND_THRESHOLD: f64 = 1.0;
/// Largest smoothed step-to-step increase still counted as decreasing, in ID units.
pub const DEFAULT_MONOTONE_SLACK: f64 = 0.25;
pub const MIN_TRAJECTORY_STEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    MonotoneDecreasing,
    UShaped,
    Flat,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeConfig {
    /// Odd width of the centred moving average.
    pub smooth_window: usize,
    pub rebound_threshold: f64,
    pub monotone_slack: f64,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        ShapeConfig {
            smooth_window: DEFAULT_SMOOTH_WINDOW,
            rebound_threshold: DEFAULT_REBOUND_THRESHOLD,
            monotone_slack: DEFAULT_MONOTONE_SLACK,
        }
    }
}

impl ShapeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smooth_window == 0 || self.smooth_window.is_multiple_of(2) {
            return Err(Error::config(format!(
                "smoothing window must be a positive odd count, got {}",
                self.smooth_window
            )));
        }
        if !(self.rebound_threshold.is_finite() && self.rebound_threshold >= 0.0) {
            return Err(Error::config("rebound threshold must be finite and >= 0"));
        }
        if !(self.monotone_slack.is_finite() && self.monotone_slack >= 0.0) {
            return Err(Error::config("monotonicity slack must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeVerdict {
    pub class: ShapeClass,
    /// Step of the smoothed minimum; set only for U-shaped curves.
    pub argmin_step: Option<u32>,
    /// Mean of the terminal smoothed values minus the smoothed minimum.
    pub rebound: f64,
}

/// Centred moving average; the window is truncated at both ends.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

pub fn classify_shape(traj: &Trajectory, cfg: &ShapeConfig) -> Result<ShapeVerdict> {
    let steps: Vec<u32> = traj.steps().iter().map(|(t, _)| *t).collect();
    classify_values(&steps, &traj.values(), cfg)
}

/// [`classify_shape`] over parallel step and value slices.
pub fn classify_values(steps: &[u32], values: &[f64], cfg: &ShapeConfig) -> Result<ShapeVerdict> {
    cfg.validate()?;
    if steps.len() != values.len() {
        return Err(Error::input("step and value series differ in length"));
    }
    let n = values.len();
    if n < MIN_TRAJECTORY_STEPS {
        return Err(Error::input(format!(
            "trajectory needs at least {MIN_TRAJECTORY_STEPS} steps, got {n}"
        )));
    }
    let s = smooth(values, cfg.smooth_window);

    let (argmin, min) = s
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best });
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tail = (n / 10).max(3);
    let terminal = s[n - tail..].iter().sum::<f64>() / tail as f64;
    let rebound = terminal - min;

    let decreasing = s.windows(2).all(|w| w[1] - w[0] <= cfg.monotone_slack);
    let drop = s[0] - s[n - 1];
    let interior = argmin > 0 && argmin < n - 1;

    let (class, argmin_step) = if decreasing && drop > cfg.rebound_threshold {
        (ShapeClass::MonotoneDecreasing, None)
    } else if interior && rebound > cfg.rebound_threshold {
        (ShapeClass::UShaped, Some(steps[argmin]))
    } else if max - min < cfg.rebound_threshold {
        (ShapeClass::Flat, None)
    } else {
        (ShapeClass::Other, None)
    };
    Ok(ShapeVerdict {
        class,
        argmin_step,
        rebound,
    })
}
