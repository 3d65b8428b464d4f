//! Extreme-value statistics for threshold exceedances.
//!
//! Exceedances of a series over a threshold tau are modeled by the
//! generalized Pareto distribution with scale sigma > 0 and shape xi:
//!
//! ```text
//! H(z) = 1 - (1 + xi z / sigma)^(-1/xi)   (xi != 0)
//!        1 - exp(-z / sigma)              (xi = 0)
//! ```
//!
//! Parameters are fitted by maximizing the exceedance log-likelihood
//! `l(sigma, xi) = -k log sigma - (1 + 1/xi) sum log(1 + xi x_m / sigma)`
//! with BFGS over `(log sigma, xi)`; outside the parameter domain the
//! log-likelihood is negative infinity. The fitted negative log-density
//! doubles as the POT loss on above-threshold predictions. Block maxima
//! extraction and the mean-excess diagnostics used for threshold choice
//! live here as well.

mod bfgs;
mod mep;

pub use mep::{mean_excess_curve, suggest_mep_threshold, MeanExcessCurve, MepOptions, MepSuggestion};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Shape magnitudes below this use the xi -> 0 analytic limits; the direct
/// formulas lose all precision to cancellation there.
pub const XI_ZERO_EPS: f64 = 1e-9;

/// Relative distance from the upper support endpoint (negative shape) at
/// which the POT loss switches to its linear continuation.
const SUPPORT_CLIP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EvtError {
    #[error("scale must be positive, got {0}")]
    BadScale(f64),
    #[error("probability must lie in [0, 1), got {0}")]
    BadProbability(f64),
    #[error("z = {z} outside the distribution support for scale {scale}, shape {shape}")]
    DomainViolation { z: f64, scale: f64, shape: f64 },
    #[error("series is empty")]
    EmptySeries,
    #[error("block length must be at least 1")]
    BadBlockLen,
    #[error("exceedance value {0} is negative")]
    InvalidExcess(f64),
    #[error("{count} exceedances below the required minimum of {required}")]
    TooFewExceedances { count: usize, required: usize },
    #[error("prediction {pred} does not exceed the threshold {threshold}")]
    PredictionBelowThreshold { pred: f64, threshold: f64 },
    #[error("mean-excess grid must be strictly ascending")]
    GridNotAscending,
    #[error("{count} defined mean-excess points below the required {required}")]
    TooFewDefinedPoints { count: usize, required: usize },
    #[error("lengths of curve components disagree")]
    CurveShapeMismatch,
    #[error("optimizer failed: {message} (last iterate scale {last_scale}, shape {last_shape})")]
    Numeric { message: String, last_scale: f64, last_shape: f64 },
}

/// A fitted generalized Pareto tail above a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    /// Threshold tau in data units.
    pub threshold: f64,
    /// Fitted scale, strictly positive.
    pub scale: f64,
    /// Fitted shape.
    pub shape: f64,
    /// Number of exceedances the fit used.
    pub n_exceed: usize,
    /// Log-likelihood at the fitted parameters.
    pub loglik: f64,
}

/// Generalized extreme value parameters for block maxima. Housed for
/// completeness of the block-maxima path; no fitting routine consumes it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
}

impl GevParams {
    pub fn new(location: f64, scale: f64, shape: f64) -> Result<Self, EvtError> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(EvtError::BadScale(scale));
        }
        Ok(GevParams { location, scale, shape })
    }
}

/// Threshold excesses `x - tau` of a series, in source order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exceedances {
    threshold: f64,
    values: Vec<f64>,
}

impl Exceedances {
    /// Wraps raw excess values (already `x - tau`). Every value must be
    /// nonnegative.
    pub fn from_excesses(threshold: f64, values: Vec<f64>) -> Result<Self, EvtError> {
        if let Some(&bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(EvtError::InvalidExcess(bad));
        }
        Ok(Exceedances { threshold, values })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Maxima of consecutive full blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMaxima {
    pub maxima: Vec<f64>,
    /// Set when the series is shorter than one block, leaving no maxima.
    pub too_short: bool,
}

/// Takes the maximum of each full `block_len`-sized block; a trailing partial
/// block is dropped. A series shorter than one block yields an empty result
/// with the warning flag set.
pub fn block_maxima(series: &[f64], block_len: usize) -> Result<BlockMaxima, EvtError> {
    if block_len == 0 {
        return Err(EvtError::BadBlockLen);
    }
    if series.is_empty() {
        return Err(EvtError::EmptySeries);
    }
    if block_len > series.len() {
        return Ok(BlockMaxima { maxima: Vec::new(), too_short: true });
    }
    let maxima = series
        .chunks_exact(block_len)
        .map(|block| block.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(BlockMaxima { maxima, too_short: false })
}

/// Collects excesses `x - tau` for every `x > tau`, preserving order.
pub fn extract_exceedances(series: &[f64], threshold: f64) -> Exceedances {
    let values = series.iter().filter(|&&x| x > threshold).map(|&x| x - threshold).collect();
    Exceedances { threshold, values }
}

/// GP distribution function at excess `z >= 0`.
pub fn gpd_cdf(z: f64, scale: f64, shape: f64) -> Result<f64, EvtError> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(EvtError::BadScale(scale));
    }
    if !z.is_finite() || z < 0.0 {
        return Err(EvtError::DomainViolation { z, scale, shape });
    }
    if shape.abs() < XI_ZERO_EPS {
        return Ok(1.0 - (-z / scale).exp());
    }
    let u = 1.0 + shape * z / scale;
    if u < 0.0 {
        return Err(EvtError::DomainViolation { z, scale, shape });
    }
    Ok((1.0 - u.powf(-1.0 / shape)).clamp(0.0, 1.0))
}

/// GP quantile function: the excess level with probability `p` below it.
/// Inverse of [`gpd_cdf`]; `p` must lie in `[0, 1)`.
pub fn gpd_quantile(p: f64, scale: f64, shape: f64) -> Result<f64, EvtError> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(EvtError::BadScale(scale));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(EvtError::BadProbability(p));
    }
    if shape.abs() < XI_ZERO_EPS {
        return Ok(-scale * (1.0 - p).ln());
    }
    Ok(scale / shape * ((1.0 - p).powf(-shape) - 1.0))
}

/// Exceedance log-likelihood `l(sigma, xi)`; negative infinity outside the
/// parameter domain. An empty exceedance set yields 0 (the empty sum).
pub fn gpd_loglik(scale: f64, shape: f64, exc: &Exceedances) -> f64 {
    if !scale.is_finite() || scale <= 0.0 || !shape.is_finite() {
        return f64::NEG_INFINITY;
    }
    let k = exc.values.len() as f64;
    if shape.abs() < XI_ZERO_EPS {
        let sum: f64 = exc.values.iter().map(|x| x / scale).sum();
        return -k * scale.ln() - sum;
    }
    let mut sum_log = 0.0;
    for &x in &exc.values {
        let u = 1.0 + shape * x / scale;
        if u <= 0.0 {
            return f64::NEG_INFINITY;
        }
        sum_log += u.ln();
    }
    -k * scale.ln() - (1.0 + 1.0 / shape) * sum_log
}

/// Gradient of the log-likelihood in `(log sigma, xi)` coordinates.
///
/// With `t_m = x_m / sigma`:
/// `dl/dlog sigma = -k + (1 + xi) sum t/(1 + xi t)`
/// `dl/dxi = (1/xi^2) sum log(1 + xi t) - (1 + 1/xi) sum t/(1 + xi t)`
/// and at xi -> 0: `dl/dlog sigma = -k + sum t`, `dl/dxi = sum (t^2/2 - t)`.
fn loglik_grad_logspace(log_scale: f64, shape: f64, excesses: &[f64]) -> Option<(f64, f64)> {
    let scale = log_scale.exp();
    let k = excesses.len() as f64;
    if shape.abs() < XI_ZERO_EPS {
        let sum_t: f64 = excesses.iter().map(|x| x / scale).sum();
        let sum_sq: f64 = excesses.iter().map(|x| (x / scale).powi(2)).sum();
        return Some((-k + sum_t, sum_sq / 2.0 - sum_t));
    }
    let mut sum_ratio = 0.0;
    let mut sum_log = 0.0;
    for &x in excesses {
        let t = x / scale;
        let u = 1.0 + shape * t;
        if u <= 0.0 {
            return None;
        }
        sum_ratio += t / u;
        sum_log += u.ln();
    }
    let d_log_scale = -k + (1.0 + shape) * sum_ratio;
    let d_shape = sum_log / (shape * shape) - (1.0 + 1.0 / shape) * sum_ratio;
    Some((d_log_scale, d_shape))
}

/// Options for [`fit_gpd`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Minimum exceedance count required before fitting.
    pub min_exceedances: usize,
    /// Gradient-norm tolerance of the optimizer.
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { min_exceedances: 20, grad_tol: 1e-6, max_iter: 300 }
    }
}

/// Method-of-moments start point: `sigma_0` from the GP moment identities
/// (clipped positive), `xi_0 = 0.1`.
fn mom_initializer(excesses: &[f64]) -> (f64, f64) {
    let n = excesses.len() as f64;
    let mean = excesses.iter().sum::<f64>() / n;
    let var = excesses.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sigma = if var > 0.0 && mean > 0.0 {
        0.5 * mean * (mean * mean / var + 1.0)
    } else {
        mean.abs()
    };
    (sigma.max(1e-8), 0.1)
}

/// Maximum-likelihood GP fit over the exceedances.
///
/// Positivity of the scale is enforced by optimizing `log sigma`. The fit
/// fails when the exceedance count is below `opts.min_exceedances` or the
/// optimizer cannot reach the gradient tolerance.
pub fn fit_gpd(exc: &Exceedances, opts: &FitOptions) -> Result<GpdFit, EvtError> {
    if exc.len() < opts.min_exceedances {
        return Err(EvtError::TooFewExceedances { count: exc.len(), required: opts.min_exceedances });
    }
    let excesses = exc.values();
    let (sigma0, xi0) = mom_initializer(excesses);
    let init_loglik = gpd_loglik(sigma0, xi0, exc);

    let objective = |theta: &[f64]| {
        let (log_scale, shape) = (theta[0], theta[1]);
        match loglik_grad_logspace(log_scale, shape, excesses) {
            Some((d_ls, d_xi)) => {
                let value = gpd_loglik(log_scale.exp(), shape, exc);
                (-value, vec![-d_ls, -d_xi])
            }
            None => (f64::INFINITY, vec![f64::NAN, f64::NAN]),
        }
    };

    let bfgs_opts = bfgs::BfgsOptions { grad_tol: opts.grad_tol, max_iter: opts.max_iter };
    let solution = bfgs::minimize(objective, &[sigma0.ln(), xi0], &bfgs_opts).map_err(|e| match e {
        bfgs::BfgsError::NonFiniteStart => EvtError::Numeric {
            message: "log-likelihood non-finite at the method-of-moments start".into(),
            last_scale: sigma0,
            last_shape: xi0,
        },
        bfgs::BfgsError::LineSearchFailed { x, value, grad_norm } => EvtError::Numeric {
            message: format!(
                "line search stalled at log-likelihood {:.6}, gradient norm {grad_norm:.3e}",
                -value
            ),
            last_scale: x[0].exp(),
            last_shape: x[1],
        },
        bfgs::BfgsError::MaxIterations { x, value, grad_norm } => EvtError::Numeric {
            message: format!(
                "gradient norm {grad_norm:.3e} after iteration cap at log-likelihood {:.6}",
                -value
            ),
            last_scale: x[0].exp(),
            last_shape: x[1],
        },
    })?;

    let scale = solution.x[0].exp();
    let shape = solution.x[1];
    let loglik = -solution.value;
    if loglik + 1e-9 < init_loglik {
        return Err(EvtError::Numeric {
            message: format!("fit log-likelihood {loglik} below the initializer's {init_loglik}"),
            last_scale: scale,
            last_shape: shape,
        });
    }
    Ok(GpdFit { threshold: exc.threshold(), scale, shape, n_exceed: exc.len(), loglik })
}

/// Durbin-Watson statistic of the mean-centered exceedance sequence, in
/// [0, 4]. `None` when fewer than 3 observations or zero variance make it
/// undefined.
pub fn durbin_watson(exc: &Exceedances) -> Option<f64> {
    let v = exc.values();
    if v.len() < 3 {
        return None;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let centered: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let denom: f64 = centered.iter().map(|e| e * e).sum();
    if denom < 1e-30 {
        return None;
    }
    let numer: f64 = centered.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    Some(numer / denom)
}

/// Negative log-density of the fitted GP at the excess `e`, shared by the
/// POT loss entry points.
///
/// Branches:
/// - `|xi| < 1e-9`: `log sigma + e/sigma`;
/// - interior: `log sigma + (1 + 1/xi) log(1 + xi e / sigma)`;
/// - beyond the clip point `(1 - 1e-6) * (-sigma/xi)` for negative shape:
///   the clip-point value continued linearly with the clip-point slope, so
///   the loss stays finite, continuous, and increasing in the overshoot.
fn gp_neg_log_density(e: f64, scale: f64, shape: f64) -> Result<f64, EvtError> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(EvtError::BadScale(scale));
    }
    if shape.abs() < XI_ZERO_EPS {
        return Ok(scale.ln() + e / scale);
    }
    if shape < 0.0 {
        let e_max = -scale / shape;
        let e_clip = e_max * (1.0 - SUPPORT_CLIP);
        if e >= e_clip {
            let value_at_clip = scale.ln() + (1.0 + 1.0 / shape) * SUPPORT_CLIP.ln();
            let slope_at_clip = (shape + 1.0) / (scale * SUPPORT_CLIP);
            return Ok(value_at_clip + slope_at_clip * (e - e_clip));
        }
    }
    let u = 1.0 + shape * e / scale;
    if u <= 0.0 {
        // Reachable only for positive shape with a negative excess argument.
        return Err(EvtError::DomainViolation { z: e, scale, shape });
    }
    Ok(scale.ln() + (1.0 + 1.0 / shape) * u.ln())
}

/// Derivative of [`gp_neg_log_density`] in `e`, matching its branches.
fn gp_neg_log_density_derivative(e: f64, scale: f64, shape: f64) -> Result<f64, EvtError> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(EvtError::BadScale(scale));
    }
    if shape.abs() < XI_ZERO_EPS {
        return Ok(1.0 / scale);
    }
    if shape < 0.0 {
        let e_clip = -scale / shape * (1.0 - SUPPORT_CLIP);
        if e >= e_clip {
            return Ok((shape + 1.0) / (scale * SUPPORT_CLIP));
        }
    }
    let u = 1.0 + shape * e / scale;
    if u <= 0.0 {
        return Err(EvtError::DomainViolation { z: e, scale, shape });
    }
    Ok((shape + 1.0) / (scale * u))
}

/// POT loss: negative log-density of the fitted GP at the excess
/// `e = pred - tau`. The prediction must exceed the threshold; gating is the
/// caller's responsibility. The value can be negative where the fitted
/// density exceeds 1.
pub fn pot_loss(pred: f64, fit: &GpdFit) -> Result<f64, EvtError> {
    ensure_above_threshold(pred, fit)?;
    gp_neg_log_density(pred - fit.threshold, fit.scale, fit.shape)
}

/// Literal-reading variant: evaluates the fitted GP density at the raw
/// prediction value instead of the excess over the threshold. Gating on
/// `pred > tau` is unchanged.
pub fn pot_loss_raw(pred: f64, fit: &GpdFit) -> Result<f64, EvtError> {
    ensure_above_threshold(pred, fit)?;
    gp_neg_log_density(pred, fit.scale, fit.shape)
}

/// d(pot_loss)/d(pred) on the same branch structure as [`pot_loss`].
pub fn pot_loss_derivative(pred: f64, fit: &GpdFit) -> Result<f64, EvtError> {
    ensure_above_threshold(pred, fit)?;
    gp_neg_log_density_derivative(pred - fit.threshold, fit.scale, fit.shape)
}

/// d(pot_loss_raw)/d(pred).
pub fn pot_loss_raw_derivative(pred: f64, fit: &GpdFit) -> Result<f64, EvtError> {
    ensure_above_threshold(pred, fit)?;
    gp_neg_log_density_derivative(pred, fit.scale, fit.shape)
}

fn ensure_above_threshold(pred: f64, fit: &GpdFit) -> Result<(), EvtError> {
    if !(pred > fit.threshold) {
        return Err(EvtError::PredictionBelowThreshold { pred, threshold: fit.threshold });
    }
    Ok(())
}

/// One active branch of the POT penalty written as
/// `affine_slope * x + affine_const + log_coef * ln(u_slope * x + u_const)`
/// in the prediction `x`. Graph builders reproduce the penalty as a
/// differentiable expression from these coefficients; on the affine
/// branches the log part is inert (`log_coef = 0`, argument 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotLocal {
    pub affine_slope: f64,
    pub affine_const: f64,
    pub log_coef: f64,
    pub u_slope: f64,
    pub u_const: f64,
}

impl PotLocal {
    pub fn value_at(&self, x: f64) -> f64 {
        self.affine_slope * x
            + self.affine_const
            + self.log_coef * (self.u_slope * x + self.u_const).ln()
    }

    pub fn derivative_at(&self, x: f64) -> f64 {
        self.affine_slope + self.log_coef * self.u_slope / (self.u_slope * x + self.u_const)
    }
}

/// [`pot_loss`] decomposed into the branch active at `pred`.
pub fn pot_loss_local(pred: f64, fit: &GpdFit) -> Result<PotLocal, EvtError> {
    ensure_above_threshold(pred, fit)?;
    gp_neg_log_density_local(pred, fit.threshold, fit.scale, fit.shape)
}

/// [`pot_loss_raw`] decomposed the same way (no argument shift).
pub fn pot_loss_raw_local(pred: f64, fit: &GpdFit) -> Result<PotLocal, EvtError> {
    ensure_above_threshold(pred, fit)?;
    gp_neg_log_density_local(pred, 0.0, fit.scale, fit.shape)
}

/// Branch selection mirrors [`gp_neg_log_density`] with `e = pred - shift`.
fn gp_neg_log_density_local(
    pred: f64,
    shift: f64,
    scale: f64,
    shape: f64,
) -> Result<PotLocal, EvtError> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(EvtError::BadScale(scale));
    }
    if shape.abs() < XI_ZERO_EPS {
        return Ok(PotLocal {
            affine_slope: 1.0 / scale,
            affine_const: scale.ln() - shift / scale,
            log_coef: 0.0,
            u_slope: 0.0,
            u_const: 1.0,
        });
    }
    let e = pred - shift;
    if shape < 0.0 {
        let e_max = -scale / shape;
        let e_clip = e_max * (1.0 - SUPPORT_CLIP);
        if e >= e_clip {
            let value_at_clip = scale.ln() + (1.0 + 1.0 / shape) * SUPPORT_CLIP.ln();
            let slope_at_clip = (shape + 1.0) / (scale * SUPPORT_CLIP);
            return Ok(PotLocal {
                affine_slope: slope_at_clip,
                affine_const: value_at_clip - slope_at_clip * (shift + e_clip),
                log_coef: 0.0,
                u_slope: 0.0,
                u_const: 1.0,
            });
        }
    }
    let u = 1.0 + shape * e / scale;
    if u <= 0.0 {
        return Err(EvtError::DomainViolation { z: e, scale, shape });
    }
    Ok(PotLocal {
        affine_slope: 0.0,
        affine_const: scale.ln(),
        log_coef: 1.0 + 1.0 / shape,
        u_slope: shape / scale,
        u_const: 1.0 - shape * shift / scale,
    })
}
