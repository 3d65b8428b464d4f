//! Station geography and graph construction.
//!
//! Stations are points on a sphere. Pairwise great-circle distances feed a
//! Gaussian kernel `a_ij = exp(-d_ij^2 / sigma_sq)`, sparsified at `epsilon`,
//! giving a symmetric nonnegative adjacency with zero diagonal. From it the
//! combinatorial Laplacian `L = D - A` and the rescaled form
//! `L~ = 2L/zeta_max - I` are derived, with `zeta_max` (the largest eigenvalue
//! of `L`) estimated by power iteration.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

use crate::util::hash_unit;

/// A station with geographic coordinates in decimal degrees.
///
/// Latitude lies in [-90, 90]; longitude in (-180, 180].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

impl StationMeta {
    pub fn new(id: impl Into<String>, lat: f64, lon: f64) -> Result<Self, GraphError> {
        let s = StationMeta { id: id.into(), lat, lon };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), GraphError> {
        if !self.lat.is_finite() || !(-90.0..=90.0).contains(&self.lat) {
            return Err(GraphError::LatitudeOutOfRange { id: self.id.clone(), lat: self.lat });
        }
        if !self.lon.is_finite() || self.lon <= -180.0 || self.lon > 180.0 {
            return Err(GraphError::LongitudeOutOfRange { id: self.id.clone(), lon: self.lon });
        }
        Ok(())
    }
}

/// Kernel and sparsification settings for [`build_adjacency`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyConfig {
    /// Kernel bandwidth sigma^2 in km^2. Must be positive.
    pub sigma_sq: f64,
    /// Sparsity cutoff in (0, 1]. Kernel values below it are zeroed.
    pub epsilon: f64,
    /// Sphere radius in km used for great-circle distances.
    pub earth_radius_km: f64,
}

impl Default for AdjacencyConfig {
    fn default() -> Self {
        AdjacencyConfig { sigma_sq: 100.0, epsilon: 0.1, earth_radius_km: 6371.0 }
    }
}

impl AdjacencyConfig {
    fn validate(&self) -> Result<(), GraphError> {
        if !self.sigma_sq.is_finite() || self.sigma_sq <= 0.0 {
            return Err(GraphError::BadConfig(format!("sigma_sq must be > 0, got {}", self.sigma_sq)));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 || self.epsilon > 1.0 {
            return Err(GraphError::BadConfig(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        if !self.earth_radius_km.is_finite() || self.earth_radius_km <= 0.0 {
            return Err(GraphError::BadConfig(format!(
                "earth_radius_km must be > 0, got {}",
                self.earth_radius_km
            )));
        }
        Ok(())
    }

    /// Distance at which the kernel crosses `epsilon`: an edge exists iff
    /// `d <= sqrt(-sigma_sq * ln(epsilon))`.
    pub fn cutoff_radius_km(&self) -> f64 {
        (-self.sigma_sq * self.epsilon.ln()).sqrt()
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("latitude {lat} out of [-90, 90] for station {id}")]
    LatitudeOutOfRange { id: String, lat: f64 },
    #[error("longitude {lon} out of (-180, 180] for station {id}")]
    LongitudeOutOfRange { id: String, lon: f64 },
    #[error("duplicate station id {0}")]
    DuplicateStation(String),
    #[error("roster has {0} stations; at least 2 required")]
    TooFewStations(usize),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("power iteration did not converge within {cap} iterations (last estimate {last})")]
    PowerIterationDiverged { cap: usize, last: f64 },
    #[error("roster csv: {0}")]
    RosterCsv(String),
}

/// Symmetric Gaussian-kernel station graph.
///
/// Entries are either 0 or in `[epsilon, 1]`; the diagonal is identically 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationGraph {
    stations: Vec<StationMeta>,
    /// Row-major N x N adjacency.
    adjacency: Vec<f64>,
    /// Ids of stations with no incident edge. Non-empty is a warning, not an
    /// error: isolated stations stay in the model with a zero neighbor term.
    isolated: Vec<String>,
}

impl StationGraph {
    pub fn n(&self) -> usize {
        self.stations.len()
    }

    pub fn stations(&self) -> &[StationMeta] {
        &self.stations
    }

    pub fn station_ids(&self) -> Vec<String> {
        self.stations.iter().map(|s| s.id.clone()).collect()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.n() + j]
    }

    pub fn adjacency_row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.adjacency[i * n..(i + 1) * n]
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.adjacency_row(i).iter().sum()
    }

    /// Stations with no incident edge.
    pub fn isolated(&self) -> &[String] {
        &self.isolated
    }

    /// True when the off-diagonal is entirely zero.
    pub fn is_fully_disconnected(&self) -> bool {
        self.isolated.len() == self.n()
    }
}

/// Great-circle distance between two stations in km via the Haversine formula
/// `2R * asin(sqrt(sin^2(dphi/2) + cos(phi_i) cos(phi_j) sin^2(dlambda/2)))`.
pub fn haversine_distance(a: &StationMeta, b: &StationMeta, radius_km: f64) -> Result<f64, GraphError> {
    if !radius_km.is_finite() || radius_km <= 0.0 {
        return Err(GraphError::BadConfig(format!("radius must be > 0, got {radius_km}")));
    }
    a.validate()?;
    b.validate()?;
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let s = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // Rounding can push s a few ulps outside [0, 1] for antipodal points.
    Ok(2.0 * radius_km * s.clamp(0.0, 1.0).sqrt().asin())
}

/// Builds the Gaussian-kernel adjacency over a roster.
///
/// `a_ij = exp(-d_ij^2 / sigma_sq)` when `i != j` and that value is at least
/// `epsilon`, else 0; the diagonal is 0. Stations left without any edge are
/// listed in [`StationGraph::isolated`].
pub fn build_adjacency(stations: &[StationMeta], config: &AdjacencyConfig) -> Result<StationGraph, GraphError> {
    config.validate()?;
    if stations.len() < 2 {
        return Err(GraphError::TooFewStations(stations.len()));
    }
    let mut seen = BTreeSet::new();
    for s in stations {
        s.validate()?;
        if !seen.insert(s.id.as_str()) {
            return Err(GraphError::DuplicateStation(s.id.clone()));
        }
    }

    let n = stations.len();
    let mut adjacency = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = haversine_distance(&stations[i], &stations[j], config.earth_radius_km)?;
            let kernel = (-d * d / config.sigma_sq).exp();
            let a = if kernel >= config.epsilon { kernel } else { 0.0 };
            adjacency[i * n + j] = a;
            adjacency[j * n + i] = a;
        }
    }

    let isolated = (0..n)
        .filter(|&i| adjacency[i * n..(i + 1) * n].iter().all(|&a| a == 0.0))
        .map(|i| stations[i].id.clone())
        .collect();

    Ok(StationGraph { stations: stations.to_vec(), adjacency, isolated })
}

/// Laplacian `L = D - A`, its degree diagonal, the spectral radius estimate
/// `zeta_max`, and the rescaled Laplacian `L~ = 2L/zeta_max - I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplacianBundle {
    n: usize,
    laplacian: Vec<f64>,
    degree: Vec<f64>,
    zeta_max: f64,
    scaled: Vec<f64>,
}

impl LaplacianBundle {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn laplacian(&self, i: usize, j: usize) -> f64 {
        self.laplacian[i * self.n + j]
    }

    pub fn laplacian_row(&self, i: usize) -> &[f64] {
        &self.laplacian[i * self.n..(i + 1) * self.n]
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.degree[i]
    }

    pub fn zeta_max(&self) -> f64 {
        self.zeta_max
    }

    pub fn scaled(&self, i: usize, j: usize) -> f64 {
        self.scaled[i * self.n + j]
    }

    pub fn scaled_row(&self, i: usize) -> &[f64] {
        &self.scaled[i * self.n..(i + 1) * self.n]
    }

    /// Neighbor indices of `i`: stations with a nonzero off-diagonal coupling.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| j != i && self.laplacian(i, j) != 0.0).collect()
    }
}

/// Iteration cap for the power method.
const POWER_ITERATION_CAP: usize = 1000;

/// Builds the Laplacian bundle, estimating `zeta_max` by power iteration to
/// the given relative tolerance (cap 1000 iterations).
///
/// An edgeless graph has `L = 0`; its `zeta_max` is reported as 0 and the
/// rescaled Laplacian degenerates to `-I`.
pub fn laplacian_bundle(graph: &StationGraph, tol: f64) -> Result<LaplacianBundle, GraphError> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(GraphError::BadConfig(format!("tolerance must be > 0, got {tol}")));
    }
    let (n, laplacian, degree) = laplacian_parts(graph);
    let zeta_max = power_iteration_max_eigenvalue(&laplacian, n, tol)?;
    Ok(assemble_bundle(n, laplacian, degree, zeta_max))
}

/// Builds the bundle with `zeta_max` pinned rather than estimated, for parity
/// with the common first-order convention of assuming `zeta_max = 2`.
pub fn laplacian_bundle_fixed_zeta(graph: &StationGraph, zeta: f64) -> Result<LaplacianBundle, GraphError> {
    if !zeta.is_finite() || zeta <= 0.0 {
        return Err(GraphError::BadConfig(format!("fixed zeta must be > 0, got {zeta}")));
    }
    let (n, laplacian, degree) = laplacian_parts(graph);
    Ok(assemble_bundle(n, laplacian, degree, zeta))
}

fn laplacian_parts(graph: &StationGraph) -> (usize, Vec<f64>, Vec<f64>) {
    let n = graph.n();
    let degree: Vec<f64> = (0..n).map(|i| graph.degree(i)).collect();
    let mut laplacian = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            laplacian[i * n + j] = if i == j { degree[i] } else { -graph.weight(i, j) };
        }
    }
    (n, laplacian, degree)
}

fn assemble_bundle(n: usize, laplacian: Vec<f64>, degree: Vec<f64>, zeta_max: f64) -> LaplacianBundle {
    let mut scaled = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let rescaled = if zeta_max > 0.0 { 2.0 * laplacian[i * n + j] / zeta_max } else { 0.0 };
            scaled[i * n + j] = rescaled - if i == j { 1.0 } else { 0.0 };
        }
    }
    LaplacianBundle { n, laplacian, degree, zeta_max, scaled }
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration with a
/// Rayleigh-quotient convergence test.
fn power_iteration_max_eigenvalue(m: &[f64], n: usize, tol: f64) -> Result<f64, GraphError> {
    // The all-ones vector is in the Laplacian null space, so the start vector
    // must not be constant; a hashed pattern guarantees a spread of entries.
    let mut v: Vec<f64> = (0..n).map(|i| hash_unit(i as u64)).collect();
    normalize(&mut v);
    let mut lambda = rayleigh(m, n, &v);
    for _ in 0..POWER_ITERATION_CAP {
        let w = mat_vec(m, n, &v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // v landed in the null space; for L = 0 that means zeta = 0.
            return Ok(0.0);
        }
        v = w;
        for x in &mut v {
            *x /= norm;
        }
        let next = rayleigh(m, n, &v);
        let converged = (next - lambda).abs() <= tol * next.abs().max(1.0);
        lambda = next;
        if converged {
            return Ok(lambda.max(0.0));
        }
    }
    Err(GraphError::PowerIterationDiverged { cap: POWER_ITERATION_CAP, last: lambda })
}

fn mat_vec(m: &[f64], n: usize, v: &[f64]) -> Vec<f64> {
    (0..n).map(|i| m[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn rayleigh(m: &[f64], n: usize, v: &[f64]) -> f64 {
    mat_vec(m, n, v).iter().zip(v).map(|(a, b)| a * b).sum()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Reads a station roster CSV with header `station_id,lat,lon`.
pub fn load_roster_csv(path: &Path) -> Result<Vec<StationMeta>, GraphError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| GraphError::RosterCsv(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| GraphError::RosterCsv(e.to_string()))?.clone();
    let expected = ["station_id", "lat", "lon"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(GraphError::RosterCsv(format!(
            "expected header `station_id,lat,lon`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| GraphError::RosterCsv(format!("line {}: {e}", idx + 2)))?;
        let parse = |field: usize, name: &str| -> Result<f64, GraphError> {
            record
                .get(field)
                .ok_or_else(|| GraphError::RosterCsv(format!("line {}: missing {name}", idx + 2)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| GraphError::RosterCsv(format!("line {}: bad {name}: {e}", idx + 2)))
        };
        let id = record
            .get(0)
            .ok_or_else(|| GraphError::RosterCsv(format!("line {}: missing station_id", idx + 2)))?
            .trim()
            .to_string();
        out.push(StationMeta::new(id, parse(1, "lat")?, parse(2, "lon")?)?);
    }
    Ok(out)
}

/// Writes a station roster CSV with header `station_id,lat,lon`.
pub fn write_roster_csv(path: &Path, stations: &[StationMeta]) -> Result<(), GraphError> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| GraphError::RosterCsv(format!("{}: {e}", path.display())))?;
    writer
        .write_record(["station_id", "lat", "lon"])
        .map_err(|e| GraphError::RosterCsv(e.to_string()))?;
    for s in stations {
        writer
            .write_record([s.id.as_str(), &s.lat.to_string(), &s.lon.to_string()])
            .map_err(|e| GraphError::RosterCsv(e.to_string()))?;
    }
    writer.flush().map_err(|e| GraphError::RosterCsv(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn station(id: &str, lat: f64, lon: f64) -> StationMeta {
        StationMeta { id: id.to_string(), lat, lon }
    }

    /// Two central-Delhi points, distance frozen from a spherical
    /// law-of-cosines computation done independently of this module.
    const DELHI_PAIR_KM: f64 = 22.19333236569955;

    #[test]
    fn haversine_zero_for_identical_points() {
        let a = station("a", 28.70, 77.10);
        let d = haversine_distance(&a, &a, 6371.0).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn haversine_matches_law_of_cosines_oracle() {
        let a = station("a", 28.70, 77.10);
        let b = station("b", 28.55, 77.25);
        let d = haversine_distance(&a, &b, 6371.0).unwrap();
        assert!((d - DELHI_PAIR_KM).abs() / DELHI_PAIR_KM < 0.005);
        // The two formulas agree far tighter than the contract demands.
        assert_relative_eq!(d, DELHI_PAIR_KM, max_relative = 1e-9);
    }

    #[test]
    fn haversine_antipodal_is_half_circumference() {
        let a = station("a", 0.0, 0.0);
        let b = station("b", 0.0, 180.0);
        let d = haversine_distance(&a, &b, 6371.0).unwrap();
        assert_relative_eq!(d, std::f64::consts::PI * 6371.0, max_relative = 1e-12);
    }

    #[test]
    fn haversine_symmetry() {
        let a = station("a", 12.0, 44.0);
        let b = station("b", -33.0, 151.0);
        let ab = haversine_distance(&a, &b, 6371.0).unwrap();
        let ba = haversine_distance(&b, &a, 6371.0).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn haversine_rejects_bad_coordinates() {
        let a = station("a", 91.0, 0.0);
        let b = station("b", 0.0, 0.0);
        assert!(matches!(
            haversine_distance(&a, &b, 6371.0),
            Err(GraphError::LatitudeOutOfRange { .. })
        ));
        let c = station("c", 0.0, -180.0);
        assert!(matches!(
            haversine_distance(&c, &b, 6371.0),
            Err(GraphError::LongitudeOutOfRange { .. })
        ));
    }

    /// Places a station `km` kilometers east of (28.6, 77.2) along the parallel.
    fn offset_east(id: &str, km: f64) -> StationMeta {
        let lat: f64 = 28.6;
        let dlon = km / (6371.0 * lat.to_radians().cos()) * 180.0 / std::f64::consts::PI;
        station(id, lat, 77.2 + dlon)
    }

    #[test]
    fn adjacency_kernel_at_ten_km() {
        let roster = [offset_east("a", 0.0), offset_east("b", 10.0)];
        let g = build_adjacency(&roster, &AdjacencyConfig::default()).unwrap();
        // d = 10 km, sigma_sq = 100 -> kernel exp(-1), above the 0.1 cutoff.
        assert_relative_eq!(g.weight(0, 1), (-1.0f64).exp(), max_relative = 1e-6);
        assert_eq!(g.weight(0, 0), 0.0);
        assert!(g.isolated().is_empty());
    }

    #[test]
    fn adjacency_cutoff_removes_weak_edge() {
        let roster = [offset_east("a", 0.0), offset_east("b", 20.0)];
        let g = build_adjacency(&roster, &AdjacencyConfig::default()).unwrap();
        // kernel exp(-4) ~ 0.018 < 0.1.
        assert_eq!(g.weight(0, 1), 0.0);
        assert_eq!(g.isolated().len(), 2);
        assert!(g.is_fully_disconnected());
    }

    #[test]
    fn colocated_stations_have_unit_weight() {
        let roster = [station("a", 28.6, 77.2), station("b", 28.6, 77.2)];
        let g = build_adjacency(&roster, &AdjacencyConfig::default()).unwrap();
        assert_eq!(g.weight(0, 1), 1.0);
    }

    #[test]
    fn adjacency_matches_scalar_recomputation() {
        let cfg = AdjacencyConfig::default();
        let roster = [
            station("s0", 28.60, 77.20),
            station("s1", 28.66, 77.12),
            station("s2", 28.52, 77.28),
            station("s3", 28.71, 77.24),
            station("s4", 28.58, 77.05),
        ];
        let g = build_adjacency(&roster, &cfg).unwrap();
        for i in 0..roster.len() {
            for j in 0..roster.len() {
                let expected = if i == j {
                    0.0
                } else {
                    let d = haversine_distance(&roster[i], &roster[j], cfg.earth_radius_km).unwrap();
                    let k = (-d * d / cfg.sigma_sq).exp();
                    if k >= cfg.epsilon {
                        k
                    } else {
                        0.0
                    }
                };
                assert_eq!(g.weight(i, j), expected, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let roster = [station("a", 28.6, 77.2), station("a", 28.7, 77.3)];
        assert!(matches!(
            build_adjacency(&roster, &AdjacencyConfig::default()),
            Err(GraphError::DuplicateStation(_))
        ));
    }

    #[test]
    fn single_station_rejected() {
        let roster = [station("a", 28.6, 77.2)];
        assert!(matches!(
            build_adjacency(&roster, &AdjacencyConfig::default()),
            Err(GraphError::TooFewStations(1))
        ));
    }

    #[test]
    fn two_node_laplacian_closed_form() {
        let roster = [offset_east("a", 0.0), offset_east("b", 10.0)];
        let g = build_adjacency(&roster, &AdjacencyConfig::default()).unwrap();
        let w = g.weight(0, 1);
        let b = laplacian_bundle(&g, 1e-10).unwrap();
        assert_eq!(b.laplacian(0, 0), w);
        assert_eq!(b.laplacian(0, 1), -w);
        assert_relative_eq!(b.zeta_max(), 2.0 * w, max_relative = 1e-8);
        // L~ = [[0, -1], [-1, 0]] up to the zeta estimate's tolerance.
        assert!(b.scaled(0, 0).abs() < 1e-7);
        assert_relative_eq!(b.scaled(0, 1), -1.0, max_relative = 1e-7);
        assert_relative_eq!(b.scaled(1, 0), -1.0, max_relative = 1e-7);
    }

    #[test]
    fn fixed_zeta_bundle_skips_estimation() {
        let roster = [offset_east("a", 0.0), offset_east("b", 10.0)];
        let g = build_adjacency(&roster, &AdjacencyConfig::default()).unwrap();
        let b = laplacian_bundle_fixed_zeta(&g, 2.0).unwrap();
        assert_eq!(b.zeta_max(), 2.0);
        // 2L/2 - I = L - I exactly.
        for i in 0..2 {
            for j in 0..2 {
                let expected = b.laplacian(i, j) - if i == j { 1.0 } else { 0.0 };
                assert_eq!(b.scaled(i, j), expected);
            }
        }
    }

    #[test]
    fn edgeless_graph_degenerates_to_negative_identity() {
        let roster = [offset_east("a", 0.0), offset_east("b", 50.0)];
        let g = build_adjacency(&roster, &AdjacencyConfig::default()).unwrap();
        let b = laplacian_bundle(&g, 1e-8).unwrap();
        assert_eq!(b.zeta_max(), 0.0);
        assert_eq!(b.scaled(0, 0), -1.0);
        assert_eq!(b.scaled(0, 1), 0.0);
    }

    fn random_roster(seed: u64, n: usize, spread_km: f64) -> Vec<StationMeta> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let lat = 28.6 + rng.gen_range(-1.0..1.0) * spread_km / 111.0;
                let lon = 77.2 + rng.gen_range(-1.0..1.0) * spread_km / 98.0;
                station(&format!("s{i}"), lat, lon)
            })
            .collect()
    }

    #[test]
    fn zeta_matches_dense_eigensolver_on_random_graphs() {
        for seed in 0..5u64 {
            let roster = random_roster(seed, 6, 12.0);
            let g = build_adjacency(&roster, &AdjacencyConfig::default()).unwrap();
            let b = laplacian_bundle(&g, 1e-10).unwrap();
            let n = g.n();
            let m = nalgebra::DMatrix::from_fn(n, n, |i, j| b.laplacian(i, j));
            let eig = m.symmetric_eigenvalues();
            let max_eig = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max_eig > 1e-12 {
                assert_relative_eq!(b.zeta_max(), max_eig, max_relative = 1e-6);
            } else {
                assert!(b.zeta_max() < 1e-12);
            }
        }
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let roster = random_roster(3, 8, 10.0);
        let g = build_adjacency(&roster, &AdjacencyConfig::default()).unwrap();
        let b = laplacian_bundle(&g, 1e-8).unwrap();
        for i in 0..g.n() {
            let row_sum: f64 = b.laplacian_row(i).iter().sum();
            assert!(row_sum.abs() < 1e-12, "row {i} sums to {row_sum}");
        }
    }

    #[test]
    fn roster_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roster.csv");
        let roster = vec![station("anand vihar", 28.6468, 77.3152), station("rk puram", 28.5632, 77.1867)];
        write_roster_csv(&path, &roster).unwrap();
        let loaded = load_roster_csv(&path).unwrap();
        assert_eq!(loaded, roster);
    }

    #[test]
    fn roster_csv_rejects_bad_header_and_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let bad_header = dir.path().join("h.csv");
        std::fs::write(&bad_header, "id,lat,lon\na,1,2\n").unwrap();
        assert!(matches!(load_roster_csv(&bad_header), Err(GraphError::RosterCsv(_))));

        let bad_row = dir.path().join("r.csv");
        std::fs::write(&bad_row, "station_id,lat,lon\na,28.6,east\n").unwrap();
        let err = load_roster_csv(&bad_row).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    proptest! {
        #[test]
        fn adjacency_symmetric_with_zero_diagonal(seed in 0u64..200, n in 2usize..10) {
            let roster = random_roster(seed, n, 25.0);
            let g = build_adjacency(&roster, &AdjacencyConfig::default()).unwrap();
            for i in 0..n {
                prop_assert_eq!(g.weight(i, i), 0.0);
                for j in 0..n {
                    prop_assert_eq!(g.weight(i, j), g.weight(j, i));
                    let a = g.weight(i, j);
                    prop_assert!(a == 0.0 || (0.1..=1.0).contains(&a));
                }
            }
        }

        #[test]
        fn raising_epsilon_never_adds_edges(seed in 0u64..100, n in 2usize..8) {
            let roster = random_roster(seed, n, 25.0);
            let loose = AdjacencyConfig { epsilon: 0.05, ..AdjacencyConfig::default() };
            let tight = AdjacencyConfig { epsilon: 0.3, ..AdjacencyConfig::default() };
            let gl = build_adjacency(&roster, &loose).unwrap();
            let gt = build_adjacency(&roster, &tight).unwrap();
            for i in 0..n {
                for j in 0..n {
                    if gt.weight(i, j) > 0.0 {
                        prop_assert!(gl.weight(i, j) > 0.0);
                    }
                }
            }
        }

        #[test]
        fn edge_iff_within_cutoff_radius(seed in 0u64..150, n in 2usize..8) {
            let cfg = AdjacencyConfig::default();
            let roster = random_roster(seed, n, 30.0);
            let g = build_adjacency(&roster, &cfg).unwrap();
            let radius = cfg.cutoff_radius_km();
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = haversine_distance(&roster[i], &roster[j], cfg.earth_radius_km).unwrap();
                    prop_assert_eq!(g.weight(i, j) > 0.0, d <= radius,
                        "d={} radius={} a={}", d, radius, g.weight(i, j));
                }
            }
        }
    }

    #[test]
    fn scaled_laplacian_spectrum_within_unit_interval_up_to_n50() {
        // Rosters chosen with a healthy spectral gap so the default budget
        // (tol 1e-8, cap 1000) converges with relative error under 4e-7,
        // keeping the top rescaled eigenvalue within the 1e-6 slack.
        for (seed, n) in [(14u64, 20usize), (18, 35), (14, 50)] {
            let roster = random_roster(seed, n, 18.0);
            let g = build_adjacency(&roster, &AdjacencyConfig::default()).unwrap();
            let b = laplacian_bundle(&g, 1e-8).unwrap();
            let m = nalgebra::DMatrix::from_fn(n, n, |i, j| b.scaled(i, j));
            let eig = m.symmetric_eigenvalues();
            for lambda in eig.iter() {
                assert!(
                    (-1.0 - 1e-6..=1.0 + 1e-6).contains(lambda),
                    "eigenvalue {lambda} escapes [-1, 1] for n={n}"
                );
            }
        }
    }

    #[test]
    fn power_iteration_reports_nonconvergence() {
        // This roster's top two Laplacian eigenvalues differ by only 0.3%,
        // which power iteration cannot resolve to 1e-8 in 1000 steps.
        let roster = random_roster(15, 35, 18.0);
        let g = build_adjacency(&roster, &AdjacencyConfig::default()).unwrap();
        match laplacian_bundle(&g, 1e-8) {
            Err(GraphError::PowerIterationDiverged { cap: 1000, last }) => {
                assert!(last > 0.0);
            }
            other => panic!("expected divergence error, got {other:?}"),
        }
    }
}