//! Forecast accuracy metrics and model-comparison statistics.
//!
//! Six accuracy measures (MAE, MASE, RMSE, SMAPE, pinball, CRPS) plus the
//! Diebold-Mariano test for pairwise loss differentials and the
//! multiple-comparison-with-the-best test for ranking many models across
//! datasets.

mod dm;
mod mcb;
mod studentized_range;

pub use dm::{dm_test, DmResult};
pub use mcb::{average_ranks, mcb_test, McbResult};
pub use studentized_range::{range_cdf, range_quantile};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{what} length {got} does not match {expected}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("{what} must not be empty")]
    Empty { what: &'static str },
    #[error("quantile level must lie in (0, 1), got {0}")]
    BadRho(f64),
    #[error("training series needs at least 2 points, got {0}")]
    ShortTrainSeries(usize),
    #[error("step {step} has {got} ensemble samples, need at least 2")]
    TooFewSamples { step: usize, got: usize },
    #[error("{what} contains a non-finite value")]
    NonFinite { what: &'static str },
    #[error("need at least {need} {what}, got {got}")]
    TooFew { what: &'static str, need: usize, got: usize },
    #[error("significance level must lie in (0, 1), got {0}")]
    BadTheta(f64),
}

fn check_pair(actual: &[f64], forecast: &[f64]) -> Result<(), MetricsError> {
    if actual.is_empty() {
        return Err(MetricsError::Empty { what: "actual" });
    }
    if forecast.len() != actual.len() {
        return Err(MetricsError::LengthMismatch {
            what: "forecast",
            expected: actual.len(),
            got: forecast.len(),
        });
    }
    Ok(())
}

pub fn mae(actual: &[f64], forecast: &[f64]) -> Result<f64, MetricsError> {
    check_pair(actual, forecast)?;
    let sum: f64 = actual.iter().zip(forecast).map(|(y, f)| (y - f).abs()).sum();
    Ok(sum / actual.len() as f64)
}

pub fn rmse(actual: &[f64], forecast: &[f64]) -> Result<f64, MetricsError> {
    check_pair(actual, forecast)?;
    let sum: f64 = actual.iter().zip(forecast).map(|(y, f)| (y - f).powi(2)).sum();
    Ok((sum / actual.len() as f64).sqrt())
}

/// Mean absolute error scaled by the in-sample naive-forecast error
/// `(q / (T - 1)) * sum |X_t - X_{t-1}|` over the training series. A
/// constant training series makes the scale zero and the ratio undefined.
pub fn mase(
    actual: &[f64],
    forecast: &[f64],
    train_series: &[f64],
) -> Result<Option<f64>, MetricsError> {
    check_pair(actual, forecast)?;
    if train_series.len() < 2 {
        return Err(MetricsError::ShortTrainSeries(train_series.len()));
    }
    let naive: f64 = train_series.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    if naive <= 0.0 {
        return Ok(None);
    }
    let q = actual.len() as f64;
    let t = train_series.len() as f64;
    let denominator = q / (t - 1.0) * naive;
    let numerator: f64 = actual.iter().zip(forecast).map(|(y, f)| (y - f).abs()).sum();
    Ok(Some(numerator / denominator))
}

/// Symmetric MAPE as a percentage in [0, 200]. A step where both the actual
/// and the forecast are zero contributes nothing.
pub fn smape(actual: &[f64], forecast: &[f64]) -> Result<f64, MetricsError> {
    check_pair(actual, forecast)?;
    let sum: f64 = actual
        .iter()
        .zip(forecast)
        .map(|(y, f)| {
            let denom = y.abs() + f.abs();
            if denom == 0.0 {
                0.0
            } else {
                2.0 * (f - y).abs() / denom
            }
        })
        .sum();
    Ok(sum / actual.len() as f64 * 100.0)
}

/// Mean quantile (pinball) loss at level `rho` in its nonnegative form
/// `max(rho * d, (rho - 1) * d)` with `d = actual - forecast`.
pub fn pinball(actual: &[f64], forecast: &[f64], rho: f64) -> Result<f64, MetricsError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(MetricsError::BadRho(rho));
    }
    check_pair(actual, forecast)?;
    let sum: f64 = actual
        .iter()
        .zip(forecast)
        .map(|(y, f)| {
            let d = y - f;
            (rho * d).max((rho - 1.0) * d)
        })
        .sum();
    Ok(sum / actual.len() as f64)
}

/// CRPS of an empirical predictive distribution, averaged over horizon
/// steps: per step `mean|X - y| - 1/2 mean|X - X'|` over the ensemble,
/// computed from sorted samples.
pub fn crps_ensemble(actual: &[f64], ensemble: &[Vec<f64>]) -> Result<f64, MetricsError> {
    if actual.is_empty() {
        return Err(MetricsError::Empty { what: "actual" });
    }
    if ensemble.len() != actual.len() {
        return Err(MetricsError::LengthMismatch {
            what: "ensemble",
            expected: actual.len(),
            got: ensemble.len(),
        });
    }
    let mut total = 0.0;
    for (step, (y, samples)) in actual.iter().zip(ensemble).enumerate() {
        if samples.len() < 2 {
            return Err(MetricsError::TooFewSamples { step, got: samples.len() });
        }
        total += crps_step(*y, samples);
    }
    Ok(total / actual.len() as f64)
}

fn crps_step(y: f64, samples: &[f64]) -> f64 {
    let s = samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean_abs = sorted.iter().map(|x| (x - y).abs()).sum::<f64>() / s;
    // For sorted samples, sum_{i<j} (x_j - x_i) telescopes to a weighted
    // single pass, which equals half the all-pairs absolute-gap sum.
    let n = sorted.len();
    let mut gaps = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        gaps += (2.0 * (i as f64 + 1.0) - n as f64 - 1.0) * x;
    }
    mean_abs - gaps / (s * s)
}

/// All six accuracy measures for one evaluation window, with the settings
/// they depend on. `mase` is absent when the training series is constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub mase: Option<f64>,
    pub rmse: f64,
    pub smape: f64,
    pub pinball: f64,
    pub crps: f64,
    pub quantile_rho: f64,
    pub horizon: usize,
    pub train_len: usize,
}

impl MetricReport {
    pub fn compute(
        actual: &[f64],
        forecast: &[f64],
        ensemble: &[Vec<f64>],
        train_series: &[f64],
        rho: f64,
    ) -> Result<MetricReport, MetricsError> {
        for (what, values) in [
            ("actual", actual),
            ("forecast", forecast),
            ("training series", train_series),
        ] {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(MetricsError::NonFinite { what });
            }
        }
        if ensemble.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite { what: "ensemble" });
        }
        Ok(MetricReport {
            mae: mae(actual, forecast)?,
            mase: mase(actual, forecast, train_series)?,
            rmse: rmse(actual, forecast)?,
            smape: smape(actual, forecast)?,
            pinball: pinball(actual, forecast, rho)?,
            crps: crps_ensemble(actual, ensemble)?,
            quantile_rho: rho,
            horizon: actual.len(),
            train_len: train_series.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pair(len: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actual = (0..len).map(|_| rng.gen_range(-50.0..150.0)).collect();
        let forecast = (0..len).map(|_| rng.gen_range(-50.0..150.0)).collect();
        (actual, forecast)
    }

    #[test]
    fn mae_rmse_closed_forms() {
        assert_eq!(mae(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 3.5);
        assert_relative_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5f64.sqrt(), epsilon = 1e-15);
        let (actual, _) = random_pair(20, 1);
        assert_eq!(mae(&actual, &actual).unwrap(), 0.0);
        assert_eq!(rmse(&actual, &actual).unwrap(), 0.0);
    }

    #[test]
    fn mae_rmse_match_scalar_oracles_on_random_vectors() {
        let (actual, forecast) = random_pair(200, 2);
        let mut abs_sum = 0.0;
        let mut sq_sum = 0.0;
        for i in (0..200).rev() {
            abs_sum += (actual[i] - forecast[i]).abs();
            sq_sum += (actual[i] - forecast[i]).powi(2);
        }
        assert_relative_eq!(mae(&actual, &forecast).unwrap(), abs_sum / 200.0, max_relative = 1e-12);
        assert_relative_eq!(
            rmse(&actual, &forecast).unwrap(),
            (sq_sum / 200.0).sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn mase_closed_form_and_undefined_cases() {
        // Train [1,2,3]: naive scale (q/(T-1)) * 2 = 1 at q = 1, so an
        // absolute error of 2 gives exactly 2.
        assert_eq!(mase(&[5.0], &[3.0], &[1.0, 2.0, 3.0]).unwrap(), Some(2.0));
        assert_eq!(mase(&[5.0], &[5.0], &[1.0, 2.0, 3.0]).unwrap(), Some(0.0));
        assert_eq!(mase(&[5.0], &[3.0], &[4.0, 4.0, 4.0]).unwrap(), None);
        assert!(matches!(
            mase(&[5.0], &[3.0], &[4.0]),
            Err(MetricsError::ShortTrainSeries(1))
        ));
    }

    #[test]
    fn smape_zero_denominators_contribute_nothing() {
        assert_eq!(smape(&[0.0], &[5.0]).unwrap(), 200.0);
        assert_eq!(smape(&[0.0], &[0.0]).unwrap(), 0.0);
        let (actual, _) = random_pair(20, 3);
        assert_eq!(smape(&actual, &actual).unwrap(), 0.0);
        let (a, f) = random_pair(200, 4);
        let s = smape(&a, &f).unwrap();
        assert!((0.0..=200.0).contains(&s));
    }

    #[test]
    fn pinball_uses_the_nonnegative_form() {
        assert_relative_eq!(pinball(&[1.0], &[0.0], 0.8).unwrap(), 0.8, epsilon = 1e-15);
        assert_relative_eq!(pinball(&[0.0], &[1.0], 0.8).unwrap(), 0.2, epsilon = 1e-15);
        assert_eq!(pinball(&[3.0], &[3.0], 0.8).unwrap(), 0.0);
        for bad in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(matches!(pinball(&[1.0], &[1.0], bad), Err(MetricsError::BadRho(_))));
        }
    }

    #[test]
    fn metrics_are_invariant_under_joint_permutation() {
        let (actual, forecast) = random_pair(64, 5);
        let mut order: Vec<usize> = (0..64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let pa: Vec<f64> = order.iter().map(|&i| actual[i]).collect();
        let pf: Vec<f64> = order.iter().map(|&i| forecast[i]).collect();
        assert_relative_eq!(mae(&actual, &forecast).unwrap(), mae(&pa, &pf).unwrap(), max_relative = 1e-12);
        assert_relative_eq!(rmse(&actual, &forecast).unwrap(), rmse(&pa, &pf).unwrap(), max_relative = 1e-12);
        assert_relative_eq!(smape(&actual, &forecast).unwrap(), smape(&pa, &pf).unwrap(), max_relative = 1e-12);
        assert_relative_eq!(
            pinball(&actual, &forecast, 0.8).unwrap(),
            pinball(&pa, &pf, 0.8).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn crps_point_mass_reduces_to_absolute_error() {
        let crps = crps_ensemble(&[3.0], &[vec![5.0; 10]]).unwrap();
        assert_relative_eq!(crps, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn crps_two_point_ensemble_closed_form() {
        // Samples y-1 and y+1: mean|X - y| = 1, half the mean absolute gap
        // is 1/2, so CRPS = 1/2.
        let crps = crps_ensemble(&[4.0], &[vec![3.0, 5.0]]).unwrap();
        assert_relative_eq!(crps, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn crps_zero_when_ensemble_matches_actual() {
        let crps = crps_ensemble(&[2.0, 7.0], &[vec![2.0, 2.0], vec![7.0, 7.0]]).unwrap();
        assert_eq!(crps, 0.0);
    }

    #[test]
    fn crps_matches_the_double_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = 5;
        let s = 50;
        let actual: Vec<f64> = (0..q).map(|_| rng.gen_range(0.0..100.0)).collect();
        let ensemble: Vec<Vec<f64>> = (0..q)
            .map(|_| (0..s).map(|_| rng.gen_range(0.0..100.0)).collect())
            .collect();
        let fast = crps_ensemble(&actual, &ensemble).unwrap();
        let mut slow = 0.0;
        for (y, samples) in actual.iter().zip(&ensemble) {
            let sf = s as f64;
            let term1 = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / sf;
            let mut pairs = 0.0;
            for a in samples {
                for b in samples {
                    pairs += (a - b).abs();
                }
            }
            slow += term1 - pairs / (2.0 * sf * sf);
        }
        slow /= q as f64;
        assert_relative_eq!(fast, slow, epsilon = 1e-10, max_relative = 1e-10);
    }

    #[test]
    fn crps_rejects_undersized_ensembles() {
        let err = crps_ensemble(&[1.0, 2.0], &[vec![1.0, 2.0], vec![3.0]]).unwrap_err();
        assert!(matches!(err, MetricsError::TooFewSamples { step: 1, got: 1 }));
    }

    #[test]
    fn length_mismatches_are_rejected() {
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(rmse(&[], &[]), Err(MetricsError::Empty { .. })));
        assert!(matches!(
            crps_ensemble(&[1.0], &[vec![1.0, 2.0], vec![1.0, 2.0]]),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn metric_report_assembles_all_fields() {
        let (actual, forecast) = random_pair(30, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ensemble: Vec<Vec<f64>> = (0..30)
            .map(|i| (0..40).map(|_| forecast[i] + rng.gen_range(-5.0..5.0)).collect())
            .collect();
        let train: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..100.0)).collect();
        let report = MetricReport::compute(&actual, &forecast, &ensemble, &train, 0.8).unwrap();
        assert_eq!(report.horizon, 30);
        assert_eq!(report.train_len, 100);
        assert_eq!(report.quantile_rho, 0.8);
        assert!(report.mae >= 0.0 && report.rmse >= 0.0 && report.crps >= 0.0);
        assert!(report.pinball >= 0.0);
        assert!(report.smape <= 200.0);
        assert!(report.mase.unwrap() >= 0.0);

        let mut poisoned = actual.clone();
        poisoned[3] = f64::NAN;
        assert!(matches!(
            MetricReport::compute(&poisoned, &forecast, &ensemble, &train, 0.8),
            Err(MetricsError::NonFinite { what: "actual" })
        ));
    }
}
