//! Distribution-free prediction intervals via windowed conformal scores.
//!
//! Each station keeps a stream of calibration scores `|actual - forecast| / U`
//! where `U` is an uncertainty scale fixed before the observation arrives.
//! The interval half-width for the next forecast is the empirical
//! `(1 - rho)`-quantile of the most recent scores times the current scale,
//! giving `[point - kappa U, point + kappa U]`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Scores smaller than this floor would make later scores blow up, so the
/// residual-scale uncertainty never drops below it.
const MIN_UNCERTAINTY: f64 = 1e-12;

/// Fractional parts within this distance of an integer are treated as that
/// integer before the ceiling, so `(1 - rho) * n` hitting an integer up to
/// rounding selects the intended order statistic.
const INDEX_SNAP: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("miscoverage level must lie in (0, 1), got {0}")]
    BadRho(f64),
    #[error("window must be at least 1")]
    BadWindow,
    #[error("uncertainty scale must be finite and positive, got {0}")]
    BadUncertainty(f64),
    #[error("kappa must be finite and nonnegative, got {0}")]
    BadKappa(f64),
    #[error("no calibration scores in the window")]
    EmptyWindow,
    #[error("{what} is not finite")]
    NonFinite { what: &'static str },
    #[error("csv write failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// How the uncertainty scale `U` is obtained: a constant 1, or the median
/// absolute residual over the calibration window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UncertaintyMode {
    Constant,
    ResidualScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalConfig {
    pub rho: f64,
    pub window: usize,
    pub uncertainty_mode: UncertaintyMode,
}

impl Default for ConformalConfig {
    fn default() -> Self {
        ConformalConfig { rho: 0.20, window: 100, uncertainty_mode: UncertaintyMode::ResidualScale }
    }
}

impl ConformalConfig {
    pub fn validate(&self) -> Result<(), ConformalError> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(ConformalError::BadRho(self.rho));
        }
        if self.window == 0 {
            return Err(ConformalError::BadWindow);
        }
        Ok(())
    }
}

/// An interval forecast `[point - kappa u, point + kappa u]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalForecast {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub kappa: f64,
}

/// Conformal score of one observation against its point forecast.
pub fn conformal_score(actual: f64, forecast: f64, u: f64) -> Result<f64, ConformalError> {
    if !u.is_finite() || u <= 0.0 {
        return Err(ConformalError::BadUncertainty(u));
    }
    Ok((actual - forecast).abs() / u)
}

/// Empirical `(1 - rho)`-quantile of the most recent `min(window, n)`
/// scores, using the higher order statistic at index
/// `ceil((1 - rho) * n)`.
pub fn conformal_quantile(scores: &[f64], cfg: &ConformalConfig) -> Result<f64, ConformalError> {
    cfg.validate()?;
    if scores.is_empty() {
        return Err(ConformalError::EmptyWindow);
    }
    let start = scores.len().saturating_sub(cfg.window);
    let window = &scores[start..];
    let mut sorted = window.to_vec();
    sorted.sort_by(f64::total_cmp);
    let index = snapped_ceil((1.0 - cfg.rho) * sorted.len() as f64).clamp(1, sorted.len());
    Ok(sorted[index - 1])
}

fn snapped_ceil(x: f64) -> usize {
    let nearest = x.round();
    let value = if (x - nearest).abs() < INDEX_SNAP { nearest } else { x.ceil() };
    value as usize
}

/// Symmetric interval around the point with half-width `kappa * u`.
pub fn conformal_interval(point: f64, kappa: f64, u: f64) -> Result<IntervalForecast, ConformalError> {
    if !u.is_finite() || u <= 0.0 {
        return Err(ConformalError::BadUncertainty(u));
    }
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(ConformalError::BadKappa(kappa));
    }
    if !point.is_finite() {
        return Err(ConformalError::NonFinite { what: "point forecast" });
    }
    let half = kappa * u;
    Ok(IntervalForecast { point, lower: point - half, upper: point + half, kappa })
}

/// Single-station calibration stream. Observations arrive in time order;
/// the uncertainty scale for an observation is fixed from the residuals
/// seen strictly before it, matching how the scale is available at
/// forecast time. Streams for different stations are independent.
#[derive(Debug, Clone)]
pub struct ConformalStream {
    cfg: ConformalConfig,
    residuals: Vec<f64>,
    scores: Vec<f64>,
}

impl ConformalStream {
    pub fn new(cfg: ConformalConfig) -> Result<Self, ConformalError> {
        cfg.validate()?;
        Ok(ConformalStream { cfg, residuals: Vec::new(), scores: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// The uncertainty scale the next observation or interval will use.
    /// Before any residuals exist the scale is 1 in both modes.
    pub fn scale(&self) -> f64 {
        match self.cfg.uncertainty_mode {
            UncertaintyMode::Constant => 1.0,
            UncertaintyMode::ResidualScale => {
                if self.residuals.is_empty() {
                    1.0
                } else {
                    let start = self.residuals.len().saturating_sub(self.cfg.window);
                    median(&self.residuals[start..]).max(MIN_UNCERTAINTY)
                }
            }
        }
    }

    /// Scores one realized (actual, forecast) pair and appends it to the
    /// calibration history.
    pub fn observe(&mut self, actual: f64, forecast: f64) -> Result<(), ConformalError> {
        if !actual.is_finite() {
            return Err(ConformalError::NonFinite { what: "actual" });
        }
        if !forecast.is_finite() {
            return Err(ConformalError::NonFinite { what: "forecast" });
        }
        let score = conformal_score(actual, forecast, self.scale())?;
        self.scores.push(score);
        self.residuals.push((actual - forecast).abs());
        Ok(())
    }

    /// Interval around the next point forecast from the current window.
    /// Errors until at least one observation has been scored.
    pub fn interval(&self, point: f64) -> Result<IntervalForecast, ConformalError> {
        let kappa = conformal_quantile(&self.scores, &self.cfg)?;
        conformal_interval(point, kappa, self.scale())
    }
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// One emitted interval, keyed by evaluation window, station, and horizon
/// step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub window_id: usize,
    pub station_id: String,
    pub step: usize,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub kappa: f64,
}

/// Writes rows as `window_id,station_id,step,point,lower,upper,kappa`.
pub fn write_interval_csv(path: &Path, rows: &[IntervalRow]) -> Result<(), ConformalError> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
