//! Diebold-Mariano test on absolute-error loss differentials.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::MetricsError;

/// Outcome of a pairwise forecast comparison. The differential at step `t`
/// is `|y - a_t| - |y - b_t|`, so a positive statistic means the second
/// forecaster has the smaller expected loss. `statistic` and `p_value` are
/// present iff the differential has positive variance; a degenerate
/// differential (identical forecasts, or a constant offset) leaves the
/// test undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: Option<f64>,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub p_value: Option<f64>,
}

/// One-sided test of whether the second forecaster beats the first:
/// `sqrt(q) * mean / sd` of the loss differential against the standard
/// normal upper tail.
pub fn dm_test(actual: &[f64], fc_a: &[f64], fc_b: &[f64]) -> Result<DmResult, MetricsError> {
    let q = actual.len();
    if q < 2 {
        return Err(MetricsError::TooFew { what: "time steps", need: 2, got: q });
    }
    if fc_a.len() != q {
        return Err(MetricsError::LengthMismatch { what: "first forecast", expected: q, got: fc_a.len() });
    }
    if fc_b.len() != q {
        return Err(MetricsError::LengthMismatch { what: "second forecast", expected: q, got: fc_b.len() });
    }
    let diffs: Vec<f64> =
        (0..q).map(|t| (actual[t] - fc_a[t]).abs() - (actual[t] - fc_b[t]).abs()).collect();
    let mean = diffs.iter().sum::<f64>() / q as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (q as f64 - 1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Ok(DmResult { statistic: None, mean_diff: mean, sd_diff: sd, p_value: None });
    }
    let statistic = (q as f64).sqrt() * mean / sd;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p_value = 1.0 - normal.cdf(statistic);
    Ok(DmResult {
        statistic: Some(statistic),
        mean_diff: mean,
        sd_diff: sd,
        p_value: Some(p_value),
    })
}
