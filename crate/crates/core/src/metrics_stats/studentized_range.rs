//! Quantiles of the studentized range with infinite degrees of freedom.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use statrs::function::erf::erfc;

use super::MetricsError;

const INTEGRATION_LIMIT: f64 = 10.0;
// Simpson subinterval count; must stay even.
const INTEGRATION_STEPS: usize = 2000;
const BISECTION_TOL: f64 = 1e-12;
const QUANTILE_UPPER_BOUND: f64 = 30.0;

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// P(range of k iid standard normals <= q), computed as
/// `k * integral of phi(z) * (Phi(z) - Phi(z - q))^(k-1) dz` over
/// [-10, 10] with Simpson's rule. The integrand is negligible beyond the
/// truncation for any quantile of practical interest.
pub fn range_cdf(k: usize, q: f64) -> f64 {
    if k < 2 || !q.is_finite() || q <= 0.0 {
        return 0.0;
    }
    let h = 2.0 * INTEGRATION_LIMIT / INTEGRATION_STEPS as f64;
    let integrand = |z: f64| {
        let band = (normal_cdf(z) - normal_cdf(z - q)).max(0.0);
        normal_pdf(z) * band.powi(k as i32 - 1)
    };
    let mut sum = integrand(-INTEGRATION_LIMIT) + integrand(INTEGRATION_LIMIT);
    for i in 1..INTEGRATION_STEPS {
        let z = -INTEGRATION_LIMIT + i as f64 * h;
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += weight * integrand(z);
    }
    (k as f64 * sum * h / 3.0).clamp(0.0, 1.0)
}

/// Upper-theta quantile of the studentized range for `k` groups at
/// infinite degrees of freedom: the q with `range_cdf(k, q) = 1 - theta`,
/// found by bisection and cached per `(k, theta)`.
pub fn range_quantile(theta: f64, k: usize) -> Result<f64, MetricsError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(MetricsError::BadTheta(theta));
    }
    if k < 2 {
        return Err(MetricsError::TooFew { what: "models", need: 2, got: k });
    }
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (k, theta.to_bits());
    if let Some(&hit) = cache.lock().expect("quantile cache").get(&key) {
        return Ok(hit);
    }
    let target = 1.0 - theta;
    let mut lo = 0.0;
    let mut hi = QUANTILE_UPPER_BOUND;
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if range_cdf(k, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let quantile = 0.5 * (lo + hi);
    cache.lock().expect("quantile cache").insert(key, quantile);
    Ok(quantile)
}
