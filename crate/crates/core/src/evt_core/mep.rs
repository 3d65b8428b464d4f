//! Mean-excess (mean residual life) diagnostics for threshold selection.
//!
//! For a GP tail the mean excess over `u` is linear in `u` with slope
//! `xi / (1 - xi)` and value `sigma_u / (1 - xi)` at the fitting threshold,
//! so the plot turning linear marks where the GP approximation starts to
//! hold. [`suggest_mep_threshold`] automates the usual visual read: it picks
//! the first grid point whose remaining curve is linear by an R-squared
//! criterion.

use serde::{Deserialize, Serialize};

use super::EvtError;

/// Standard normal 0.975 quantile, for the 95% confidence band.
const Z_975: f64 = 1.959963984540054;

/// Mean-excess values over a threshold grid in ascending order. A point is
/// defined only when at least two observations exceed it, so the band's
/// sample standard deviation exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanExcessCurve {
    thresholds: Vec<f64>,
    mean_excess: Vec<Option<f64>>,
    ci_lower: Vec<Option<f64>>,
    ci_upper: Vec<Option<f64>>,
    n_exceed: Vec<usize>,
}

impl MeanExcessCurve {
    /// Assembles a curve from parallel component vectors, validating shape
    /// agreement and a strictly ascending grid.
    pub fn from_parts(
        thresholds: Vec<f64>,
        mean_excess: Vec<Option<f64>>,
        ci_lower: Vec<Option<f64>>,
        ci_upper: Vec<Option<f64>>,
        n_exceed: Vec<usize>,
    ) -> Result<Self, EvtError> {
        let n = thresholds.len();
        if mean_excess.len() != n || ci_lower.len() != n || ci_upper.len() != n || n_exceed.len() != n {
            return Err(EvtError::CurveShapeMismatch);
        }
        if thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EvtError::GridNotAscending);
        }
        Ok(MeanExcessCurve { thresholds, mean_excess, ci_lower, ci_upper, n_exceed })
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn mean_excess(&self) -> &[Option<f64>] {
        &self.mean_excess
    }

    pub fn ci_lower(&self) -> &[Option<f64>] {
        &self.ci_lower
    }

    pub fn ci_upper(&self) -> &[Option<f64>] {
        &self.ci_upper
    }

    pub fn n_exceed(&self) -> &[usize] {
        &self.n_exceed
    }

    /// Grid points with a defined mean excess, as `(threshold, mean)` pairs
    /// in grid order.
    pub fn defined_points(&self) -> Vec<(f64, f64)> {
        self.thresholds
            .iter()
            .zip(&self.mean_excess)
            .filter_map(|(&u, me)| me.map(|m| (u, m)))
            .collect()
    }
}

/// Computes the mean-excess curve of `series` over `grid` (strictly
/// ascending). Each point averages `x - u` over observations `x > u` and
/// carries a 95% normal confidence band from the sample standard deviation.
pub fn mean_excess_curve(series: &[f64], grid: &[f64]) -> Result<MeanExcessCurve, EvtError> {
    if series.is_empty() {
        return Err(EvtError::EmptySeries);
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EvtError::GridNotAscending);
    }
    let mut mean_excess = Vec::with_capacity(grid.len());
    let mut ci_lower = Vec::with_capacity(grid.len());
    let mut ci_upper = Vec::with_capacity(grid.len());
    let mut n_exceed = Vec::with_capacity(grid.len());
    for &u in grid {
        let excesses: Vec<f64> = series.iter().filter(|&&x| x > u).map(|&x| x - u).collect();
        let n = excesses.len();
        n_exceed.push(n);
        if n < 2 {
            mean_excess.push(None);
            ci_lower.push(None);
            ci_upper.push(None);
            continue;
        }
        let mean = excesses.iter().sum::<f64>() / n as f64;
        let var = excesses.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let half_width = Z_975 * (var / n as f64).sqrt();
        mean_excess.push(Some(mean));
        ci_lower.push(Some(mean - half_width));
        ci_upper.push(Some(mean + half_width));
    }
    MeanExcessCurve::from_parts(grid.to_vec(), mean_excess, ci_lower, ci_upper, n_exceed)
}

/// Options for [`suggest_mep_threshold`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MepOptions {
    /// Minimum R-squared of the remaining-curve regression to call it linear.
    pub r2_min: f64,
    /// Minimum number of defined curve points required before suggesting.
    pub min_defined_points: usize,
    /// Minimum defined points a candidate's remaining tail must contain.
    pub min_tail_points: usize,
}

impl Default for MepOptions {
    fn default() -> Self {
        MepOptions { r2_min: 0.98, min_defined_points: 10, min_tail_points: 3 }
    }
}

/// A threshold suggestion with the regression evidence behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MepSuggestion {
    /// Suggested threshold, a grid point of the curve.
    pub threshold: f64,
    /// Index of that point in the curve's grid.
    pub grid_index: usize,
    /// R-squared of the mean-excess regression over the remaining tail.
    pub r_squared: f64,
    /// Fitted slope of that regression.
    pub slope: f64,
    /// Fitted intercept (at threshold zero) of that regression.
    pub intercept: f64,
}

impl MepSuggestion {
    /// GP shape implied by the tail slope via `slope = xi / (1 - xi)`.
    pub fn implied_shape(&self) -> f64 {
        self.slope / (1.0 + self.slope)
    }
}

/// Picks the first grid point from which the remaining defined mean-excess
/// points fit a line with R-squared at least `opts.r2_min`. `Ok(None)` when
/// no point qualifies.
pub fn suggest_mep_threshold(
    curve: &MeanExcessCurve,
    opts: &MepOptions,
) -> Result<Option<MepSuggestion>, EvtError> {
    let defined = curve.defined_points();
    if defined.len() < opts.min_defined_points {
        return Err(EvtError::TooFewDefinedPoints {
            count: defined.len(),
            required: opts.min_defined_points,
        });
    }
    for (grid_index, &u) in curve.thresholds().iter().enumerate() {
        let tail: Vec<(f64, f64)> = defined.iter().copied().filter(|&(x, _)| x >= u).collect();
        if tail.len() < opts.min_tail_points {
            break;
        }
        let (intercept, slope, r_squared) = ols_line(&tail);
        if r_squared >= opts.r2_min {
            return Ok(Some(MepSuggestion { threshold: u, grid_index, r_squared, slope, intercept }));
        }
    }
    Ok(None)
}

/// Least-squares line through `(x, y)` points: `(intercept, slope, r_squared)`.
/// Zero variance in `y` counts as a perfect (horizontal) fit.
fn ols_line(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for &(x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    if syy < 1e-30 {
        return (mean_y, 0.0, 1.0);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points.iter().map(|&(x, y)| (y - intercept - slope * x).powi(2)).sum();
    (intercept, slope, 1.0 - ss_res / syy)
}
