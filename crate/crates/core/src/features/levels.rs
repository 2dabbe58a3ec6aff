use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::linalg::{dot, norm};

/// Early window of the KL early/late split, in generation steps.
pub const DEFAULT_EARLY_WINDOW: usize = 32;

/// `1 - cos(e0, ec)`; inputs are renormalized first. Lies in `[0, 2]`.
pub fn semantic_delta(e0: &[f64], ec: &[f64]) -> Result<f64> {
    if e0.len() != ec.len() {
        return Err(CrmError::DimensionMismatch {
            expected: e0.len(),
            got: ec.len(),
        });
    }
    let (n0, nc) = (norm(e0), norm(ec));
    if n0 == 0.0 || nc == 0.0 || !n0.is_finite() || !nc.is_finite() {
        return Err(CrmError::InvalidArgument("zero or non-finite embedding".into()));
    }
    let cos = (dot(e0, ec) / (n0 * nc)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Five-number summary of a per-step KL series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlStats {
    pub mean: f64,
    pub max: f64,
    /// Population variance.
    pub var: f64,
    /// Mean of the early window minus mean of the remainder (an empty
    /// remainder counts as 0).
    pub early_late: f64,
    /// OLS slope against the 0-based step index.
    pub trend: f64,
}

impl KlStats {
    pub const NAMES: [&'static str; 5] = ["kl_mean", "kl_max", "kl_var", "kl_early_late", "kl_trend"];

    pub fn to_array(&self) -> [f64; 5] {
        [self.mean, self.max, self.var, self.early_late, self.trend]
    }
}

pub fn kl_statistics(series: &[f64], early_window: usize) -> Result<KlStats> {
    if series.is_empty() {
        return Err(CrmError::InvalidArgument("empty KL series".into()));
    }
    if early_window == 0 {
        return Err(CrmError::InvalidArgument("early window must be positive".into()));
    }
    if series.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(CrmError::InvalidArgument(
            "KL series entries must be finite and nonnegative".into(),
        ));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;

    let split = early_window.min(series.len());
    let (early, late) = series.split_at(split);
    let early_mean = early.iter().sum::<f64>() / early.len() as f64;
    let late_mean = if late.is_empty() {
        0.0
    } else {
        late.iter().sum::<f64>() / late.len() as f64
    };

    let trend = if series.len() < 2 {
        0.0
    } else {
        let t_mean = (n - 1.0) / 2.0;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (t, v) in series.iter().enumerate() {
            let dt = t as f64 - t_mean;
            sxy += dt * (v - mean);
            sxx += dt * dt;
        }
        sxy / sxx
    };

    Ok(KlStats {
        mean,
        max,
        var,
        early_late: early_mean - late_mean,
        trend,
    })
}
