//! Rolling-window experiment driver: per-window GP refits, training,
//! forecasting, metrics, and conformal intervals, with deterministic
//! artifact emission.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{ConformalStream, IntervalRow, write_interval_csv};
use crate::diff_engine::Tensor;
use crate::evt_core::{extract_exceedances, fit_gpd, GpdFit};
use crate::geo_graph::{
    build_adjacency, laplacian_bundle, load_roster_csv, write_roster_csv, LaplacianBundle,
    StationMeta,
};
use crate::metrics_stats::MetricReport;
use crate::stgcn_model::{EstgcnModel, NormStats};
use crate::training::{
    effective_context, history_block, rolling_windows, select_betas, train, write_beta_table,
    write_training_log, BetaRow, LossConfig, WindowSplit,
};
use crate::util::derive_seed;

use super::config::RunConfig;
use super::manifest::{GpdRecord, RunManifest, WindowRecord};
use super::panel::{load_panel_csv, subset_roster, write_panel_csv, SeriesPanel};
use super::synth::{generate_synthetic_panel, SynthTruth};
use super::PipelineError;

/// Seed salts keeping the derived RNG streams of different stages apart.
const SALT_PROTO: u64 = 0x01;
const SALT_WINDOW_INIT: u64 = 0x1000;
const SALT_WINDOW_TRAIN: u64 = 0x2000;
const SALT_ENSEMBLE: u64 = 0x3000;

#[derive(Debug, Clone)]
pub struct RunInputs {
    pub roster: Vec<StationMeta>,
    pub panel: SeriesPanel,
    pub data_source: String,
}

#[derive(Debug)]
pub struct RunBundle {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    pub failed_windows: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ForecastRow {
    window_id: usize,
    station_id: String,
    date: NaiveDate,
    step: usize,
    actual: f64,
    point: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricRow {
    window_id: usize,
    station_id: String,
    mae: f64,
    rmse: f64,
    mase: Option<f64>,
    smape: f64,
    pinball: f64,
    crps: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GpdCsvRow {
    window_id: usize,
    station_id: String,
    threshold: f64,
    scale: f64,
    shape: f64,
    n_exceed: usize,
    loglik: f64,
}

/// Synthetic inputs from the `[synth]` section, seeded by `run.seed`.
pub fn prepare_synthetic(cfg: &RunConfig) -> Result<(RunInputs, SynthTruth), PipelineError> {
    let (roster, panel, truth) = generate_synthetic_panel(&cfg.synth, cfg.run.seed)?;
    let inputs = RunInputs { roster, panel, data_source: "synthetic".to_string() };
    Ok((inputs, truth))
}

struct WindowOutput {
    gpd: Vec<GpdRecord>,
    pot_disabled: Vec<String>,
    forecasts: Vec<ForecastRow>,
    metrics: Vec<MetricRow>,
    intervals: Vec<IntervalRow>,
    model: EstgcnModel,
}

/// GP fits over one training range. Stations with fewer exceedances than
/// the configured minimum get no fit and train without the tail penalty.
fn station_fits(
    panel: &SeriesPanel,
    range: &std::ops::Range<usize>,
    threshold: f64,
    cfg: &RunConfig,
) -> Result<(Vec<Option<GpdFit>>, Vec<bool>, Vec<GpdRecord>), PipelineError> {
    let opts = cfg.fit_options();
    let mut fits = Vec::with_capacity(panel.n_stations());
    let mut disabled = Vec::with_capacity(panel.n_stations());
    let mut records = Vec::new();
    for s in 0..panel.n_stations() {
        let series: Vec<f64> = range.clone().map(|t| panel.values.get(t, s)).collect();
        let exceedances = extract_exceedances(&series, threshold);
        if exceedances.len() < opts.min_exceedances {
            fits.push(None);
            disabled.push(true);
            continue;
        }
        let fit = fit_gpd(&exceedances, &opts)?;
        records.push(GpdRecord {
            station_id: panel.station_ids[s].clone(),
            threshold: fit.threshold,
            scale: fit.scale,
            shape: fit.shape,
            n_exceed: fit.n_exceed,
            loglik: fit.loglik,
        });
        fits.push(Some(fit));
        disabled.push(false);
    }
    Ok((fits, disabled, records))
}

fn norm_stats_for(panel: &SeriesPanel, range: &std::ops::Range<usize>) -> Result<NormStats, PipelineError> {
    let columns: Vec<Vec<f64>> = (0..panel.n_stations())
        .map(|s| range.clone().map(|t| panel.values.get(t, s)).collect())
        .collect();
    Ok(NormStats::fit(&columns)?)
}

/// Point forecast of `horizon` rows starting at `origin`, in data units,
/// steps by stations.
fn forecast_at(
    model: &EstgcnModel,
    panel: &Tensor,
    origin: usize,
    context: usize,
) -> Result<Tensor, PipelineError> {
    if origin < context {
        return Err(PipelineError::Input(format!(
            "forecast origin {origin} has fewer than {context} history rows"
        )));
    }
    let history = history_block(panel, origin - context, context);
    Ok(model.forecast(&history)?)
}

#[allow(clippy::too_many_arguments)]
fn run_window(
    w: usize,
    split: &WindowSplit,
    panel: &SeriesPanel,
    graph: &LaplacianBundle,
    cfg: &RunConfig,
    betas: (f64, f64),
    threshold: f64,
    previous: Option<&EstgcnModel>,
    context: usize,
    log_path: &Path,
) -> Result<WindowOutput, PipelineError> {
    let seed = cfg.run.seed;
    let n = panel.n_stations();
    let q = split.test.len();
    let stats = norm_stats_for(panel, &split.train)?;
    let (fits, disabled, gpd) = station_fits(panel, &split.train, threshold, cfg)?;
    let loss = LossConfig {
        beta1: betas.0,
        beta2: betas.1,
        thresholds: vec![threshold; n],
        gpd_fits: fits,
        potl_raw_argument: cfg.evt.potl_raw_argument,
        pot_disabled: disabled.clone(),
    };
    let mut model = match previous {
        Some(prev) if cfg.training.warm_start => {
            let mut m = prev.clone();
            m.norm_stats = stats;
            m
        }
        _ => EstgcnModel::init(
            &cfg.model_config(q),
            graph.clone(),
            stats,
            derive_seed(seed, SALT_WINDOW_INIT + w as u64),
        )?,
    };
    let train_cfg = cfg.train_config(derive_seed(seed, SALT_WINDOW_TRAIN + w as u64));
    let epoch_stats = train(&mut model, &panel.values, split, &loss, &train_cfg)?;
    write_training_log(log_path, &epoch_stats)?;

    let val_pred = forecast_at(&model, &panel.values, split.val.start, context)?;
    let test_pred = forecast_at(&model, &panel.values, split.test.start, context)?;
    let mut forecasts = Vec::with_capacity(n * q);
    let mut metrics = Vec::with_capacity(n);
    let mut intervals = Vec::with_capacity(n * q);
    for s in 0..n {
        let station_id = panel.station_ids[s].clone();
        let actual_val: Vec<f64> = split.val.clone().map(|t| panel.values.get(t, s)).collect();
        let point_val: Vec<f64> = (0..split.val.len()).map(|j| val_pred.get(j, s)).collect();
        let actual_test: Vec<f64> = split.test.clone().map(|t| panel.values.get(t, s)).collect();
        let point_test: Vec<f64> = (0..q).map(|j| test_pred.get(j, s)).collect();

        for (j, (&actual, &point)) in actual_test.iter().zip(&point_test).enumerate() {
            forecasts.push(ForecastRow {
                window_id: w,
                station_id: station_id.clone(),
                date: panel.timestamps[split.test.start + j],
                step: j,
                actual,
                point,
            });
        }

        // Predictive ensemble for the CRPS: the point forecast plus
        // validation residuals resampled with a per-(window, station) seed.
        let residuals: Vec<f64> =
            actual_val.iter().zip(&point_val).map(|(a, p)| a - p).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            derive_seed(seed, SALT_ENSEMBLE + w as u64),
            s as u64,
        ));
        let ensemble: Vec<Vec<f64>> = point_test
            .iter()
            .map(|&point| {
                (0..cfg.metrics.crps_samples)
                    .map(|_| point + residuals[rng.gen_range(0..residuals.len())])
                    .collect()
            })
            .collect();
        let train_series: Vec<f64> =
            split.train.clone().map(|t| panel.values.get(t, s)).collect();
        let report = MetricReport::compute(
            &actual_test,
            &point_test,
            &ensemble,
            &train_series,
            cfg.metrics.pinball_rho,
        )?;
        metrics.push(MetricRow {
            window_id: w,
            station_id: station_id.clone(),
            mae: report.mae,
            rmse: report.rmse,
            mase: report.mase,
            smape: report.smape,
            pinball: report.pinball,
            crps: report.crps,
        });

        // Calibrate on the validation trajectory, then freeze the state:
        // every test step's interval uses only information available at
        // the forecast origin.
        let mut stream = ConformalStream::new(cfg.conformal_config())?;
        for (&actual, &point) in actual_val.iter().zip(&point_val) {
            stream.observe(actual, point)?;
        }
        for (j, &point) in point_test.iter().enumerate() {
            let interval = stream.interval(point)?;
            intervals.push(IntervalRow {
                window_id: w,
                station_id: station_id.clone(),
                step: j,
                point: interval.point,
                lower: interval.lower,
                upper: interval.upper,
                kappa: interval.kappa,
            });
        }
    }
    let pot_disabled = disabled
        .iter()
        .enumerate()
        .filter(|(_, d)| **d)
        .map(|(s, _)| panel.station_ids[s].clone())
        .collect();
    Ok(WindowOutput { gpd, pot_disabled, forecasts, metrics, intervals, model })
}

/// Runs the full experiment and writes the bundle under `out_dir`:
/// `manifest.json`, deterministic tables under `results/`, and timing logs
/// under `logs/` (the only non-deterministic artifacts). A failed window
/// is recorded in its manifest entry and the remaining windows still run.
pub fn run_experiment(
    inputs: &RunInputs,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<RunBundle, PipelineError> {
    cfg.validate()?;
    let panel = &inputs.panel;
    panel.ensure_complete()?;
    let roster = subset_roster(&inputs.roster, &panel.station_ids)?;
    let pollutant = cfg.data.pollutant.clone();
    let threshold = cfg.threshold_for(&pollutant)?;
    let seed = cfg.run.seed;
    let scheme = cfg.scheme()?;
    let q = scheme.horizon();

    let graph = build_adjacency(&roster, &cfg.adjacency_config())?;
    let graph = laplacian_bundle(&graph, cfg.graph.spectral_tol)?;

    let total = panel.n_rows();
    let needed = scheme.window_count() * scheme.window_len();
    let anchor = cfg.run.anchor.unwrap_or_else(|| total.saturating_sub(needed));
    let windows = rolling_windows(total, scheme, anchor)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let context = effective_context(&cfg.train_config(0), cfg.model.lag);

    let results = out_dir.join("results");
    let logs = out_dir.join("logs");
    std::fs::create_dir_all(&results)?;
    std::fs::create_dir_all(&logs)?;
    write_panel_csv(&results.join("panel.csv"), panel)?;
    write_roster_csv(&results.join("stations.csv"), &roster)
        .map_err(PipelineError::Graph)?;

    // Betas are selected once, on the first window, and reused.
    let (fits0, disabled0, _) = station_fits(panel, &windows[0].train, threshold, cfg)?;
    let template = LossConfig {
        beta1: cfg.beta.grid[0].0,
        beta2: cfg.beta.grid[0].1,
        thresholds: vec![threshold; panel.n_stations()],
        gpd_fits: fits0,
        potl_raw_argument: cfg.evt.potl_raw_argument,
        pot_disabled: disabled0,
    };
    let (betas, beta_rows) = if cfg.beta.grid.len() == 1 {
        let (beta1, beta2) = cfg.beta.grid[0];
        let rows = vec![BetaRow { beta1, beta2, val_rmse: None, status: "ok".to_string() }];
        ((beta1, beta2), rows)
    } else {
        let stats0 = norm_stats_for(panel, &windows[0].train)?;
        let proto = EstgcnModel::init(
            &cfg.model_config(q),
            graph.clone(),
            stats0,
            derive_seed(seed, SALT_PROTO),
        )?;
        select_betas(
            &cfg.beta.grid,
            || proto.clone(),
            &panel.values,
            &windows[0],
            &template,
            &cfg.train_config(derive_seed(seed, SALT_PROTO)),
        )?
    };
    write_beta_table(&results.join("beta_table.csv"), &beta_rows)?;

    let mut window_records = Vec::with_capacity(windows.len());
    let mut all_forecasts: Vec<ForecastRow> = Vec::new();
    let mut all_metrics: Vec<MetricRow> = Vec::new();
    let mut all_intervals: Vec<IntervalRow> = Vec::new();
    let mut all_gpd: Vec<GpdCsvRow> = Vec::new();
    let mut previous: Option<EstgcnModel> = None;
    for (w, split) in windows.iter().enumerate() {
        let log_path = logs.join(format!("window_{w:02}_training.csv"));
        let outcome = run_window(
            w,
            split,
            panel,
            &graph,
            cfg,
            betas,
            threshold,
            previous.as_ref(),
            context,
            &log_path,
        );
        let mut record = WindowRecord {
            index: w,
            test_first: panel.timestamps[split.test.start],
            test_last: panel.timestamps[split.test.end - 1],
            beta1: betas.0,
            beta2: betas.1,
            pot_disabled_stations: Vec::new(),
            gpd: Vec::new(),
            status: "ok".to_string(),
        };
        match outcome {
            Ok(output) => {
                record.pot_disabled_stations = output.pot_disabled;
                record.gpd = output.gpd.clone();
                for g in output.gpd {
                    all_gpd.push(GpdCsvRow {
                        window_id: w,
                        station_id: g.station_id,
                        threshold: g.threshold,
                        scale: g.scale,
                        shape: g.shape,
                        n_exceed: g.n_exceed,
                        loglik: g.loglik,
                    });
                }
                all_forecasts.extend(output.forecasts);
                all_metrics.extend(output.metrics);
                all_intervals.extend(output.intervals);
                previous = Some(output.model);
            }
            Err(e) => {
                record.status = format!("failed: {e}");
                previous = None;
            }
        }
        window_records.push(record);
    }

    write_csv_rows(&results.join("forecasts.csv"), &all_forecasts)?;
    write_csv_rows(&results.join("metrics.csv"), &all_metrics)?;
    write_csv_rows(&results.join("gpd_fits.csv"), &all_gpd)?;
    write_interval_csv(&results.join("intervals.csv"), &all_intervals)?;

    let mut artifacts: Vec<String> = [
        "manifest.json",
        "results/beta_table.csv",
        "results/forecasts.csv",
        "results/gpd_fits.csv",
        "results/intervals.csv",
        "results/metrics.csv",
        "results/panel.csv",
        "results/stations.csv",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    artifacts.sort();
    let manifest = RunManifest {
        seed,
        pollutant,
        threshold,
        scheme: scheme.as_str().to_string(),
        data_source: inputs.data_source.clone(),
        stations: panel.station_ids.clone(),
        config: cfg.clone(),
        windows: window_records,
        artifacts,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    let failed = manifest.failed_windows();
    Ok(RunBundle { out_dir: out_dir.to_path_buf(), manifest, failed_windows: failed })
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reruns a bundle from its manifest: synthetic sources are regenerated
/// from the recorded seed, ingested sources reload the panel snapshot next
/// to the manifest. Identical inputs produce a bitwise-identical bundle.
pub fn run_from_manifest(
    manifest_path: &Path,
    out_dir: &Path,
) -> Result<RunBundle, PipelineError> {
    let manifest = RunManifest::load(manifest_path)?;
    let mut cfg = manifest.config.clone();
    cfg.run.seed = manifest.seed;
    cfg.data.pollutant = manifest.pollutant.clone();
    cfg.run.scheme = manifest.scheme.clone();
    let inputs = if manifest.data_source == "synthetic" {
        prepare_synthetic(&cfg)?.0
    } else {
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let roster = load_roster_csv(&base.join("results/stations.csv"))?;
        let (panel, _) =
            load_panel_csv(&base.join("results/panel.csv"), &roster, &cfg.clean_policy())?;
        RunInputs { roster, panel, data_source: manifest.data_source.clone() }
    };
    run_experiment(&inputs, &cfg, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::synth::SynthConfig;

    /// Small but structurally complete run: 3 stations, 440 days, short
    /// scheme (12 windows of 30 test days each), one epoch.
    fn quick_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.synth = SynthConfig { n_stations: 3, n_days: 440, ..SynthConfig::default() };
        cfg.model.k_layers = 1;
        cfg.model.lag = 3;
        cfg.model.hidden = 2;
        cfg.training.epochs = 1;
        cfg.training.batch = 64;
        cfg.beta.grid = vec![(1.0, 0.5)];
        cfg.evt.min_exceedances = 15;
        cfg.run.seed = 5;
        cfg
    }

    fn read(path: &Path) -> String {
        std::fs::read_to_string(path).unwrap()
    }

    fn line_count(path: &Path) -> usize {
        read(path).lines().count()
    }

    #[test]
    fn full_run_emits_a_complete_bundle() {
        let cfg = quick_config();
        let (inputs, truth) = prepare_synthetic(&cfg).unwrap();
        assert_eq!(truth.threshold, 60.0);
        let dir = tempfile::tempdir().unwrap();
        let bundle = run_experiment(&inputs, &cfg, dir.path()).unwrap();
        assert_eq!(bundle.failed_windows, 0);
        let manifest = &bundle.manifest;
        assert_eq!(manifest.windows.len(), 12);
        assert!(manifest.windows.iter().all(|w| w.succeeded()));
        assert_eq!(manifest.threshold, 60.0);
        for window in &manifest.windows {
            assert_eq!((window.beta1, window.beta2), (1.0, 0.5));
            for fit in &window.gpd {
                assert_eq!(fit.threshold, manifest.threshold);
            }
        }
        let results = dir.path().join("results");
        // Header plus windows x stations x steps rows.
        assert_eq!(line_count(&results.join("forecasts.csv")), 1 + 12 * 3 * 30);
        assert_eq!(line_count(&results.join("intervals.csv")), 1 + 12 * 3 * 30);
        assert_eq!(line_count(&results.join("metrics.csv")), 1 + 12 * 3);
        assert!(results.join("panel.csv").exists());
        assert!(results.join("stations.csv").exists());
        assert!(results.join("beta_table.csv").exists());
        assert!(results.join("gpd_fits.csv").exists());
        for w in 0..12 {
            assert!(dir.path().join(format!("logs/window_{w:02}_training.csv")).exists());
        }
        let intervals = read(&results.join("intervals.csv"));
        for line in intervals.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            let point: f64 = fields[3].parse().unwrap();
            let lower: f64 = fields[4].parse().unwrap();
            let upper: f64 = fields[5].parse().unwrap();
            assert!(lower <= point && point <= upper, "{line}");
        }
    }

    #[test]
    fn rerun_from_manifest_is_bitwise_identical() {
        let mut cfg = quick_config();
        cfg.training.warm_start = true;
        let (inputs, _) = prepare_synthetic(&cfg).unwrap();
        let first = tempfile::tempdir().unwrap();
        let bundle = run_experiment(&inputs, &cfg, first.path()).unwrap();
        assert_eq!(bundle.failed_windows, 0);
        let second = tempfile::tempdir().unwrap();
        run_from_manifest(&first.path().join("manifest.json"), second.path()).unwrap();
        for artifact in &bundle.manifest.artifacts {
            let a = std::fs::read(first.path().join(artifact)).unwrap();
            let b = std::fs::read(second.path().join(artifact)).unwrap();
            assert_eq!(a, b, "artifact {artifact} differs between reruns");
        }
    }

    #[test]
    fn singleton_mse_grid_skips_selection() {
        let mut cfg = quick_config();
        cfg.beta.grid = vec![(1.0, 0.0)];
        cfg.synth.n_days = 440;
        let (inputs, _) = prepare_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bundle = run_experiment(&inputs, &cfg, dir.path()).unwrap();
        assert_eq!(bundle.failed_windows, 0);
        assert!(bundle.manifest.windows.iter().all(|w| (w.beta1, w.beta2) == (1.0, 0.0)));
        let table = read(&dir.path().join("results/beta_table.csv"));
        assert_eq!(table.lines().count(), 2, "{table}");
    }

    #[test]
    fn sparse_exceedance_stations_disable_the_penalty() {
        let mut cfg = quick_config();
        cfg.evt.min_exceedances = 100_000;
        let (inputs, _) = prepare_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bundle = run_experiment(&inputs, &cfg, dir.path()).unwrap();
        assert_eq!(bundle.failed_windows, 0);
        for window in &bundle.manifest.windows {
            assert_eq!(window.pot_disabled_stations, inputs.panel.station_ids);
            assert!(window.gpd.is_empty());
        }
    }

    #[test]
    fn a_failing_window_is_recorded_and_the_rest_continue() {
        let cfg = quick_config();
        let (mut inputs, _) = prepare_synthetic(&cfg).unwrap();
        // Window 0 normalizes over rows [0, 50); a constant station there
        // has zero variance and fails that window only.
        for t in 0..50 {
            inputs.panel.values.set(t, 2, 40.0);
        }
        let dir = tempfile::tempdir().unwrap();
        let bundle = run_experiment(&inputs, &cfg, dir.path()).unwrap();
        assert_eq!(bundle.failed_windows, 1);
        assert!(bundle.manifest.windows[0].status.starts_with("failed:"));
        assert!(bundle.manifest.windows[0].status.contains("variance"));
        assert!(bundle.manifest.windows[1..].iter().all(|w| w.succeeded()));
        let lines = line_count(&dir.path().join("results/forecasts.csv"));
        assert_eq!(lines, 1 + 11 * 3 * 30);
    }

    #[test]
    fn bad_anchor_is_a_config_error() {
        let mut cfg = quick_config();
        cfg.run.anchor = Some(1);
        let (inputs, _) = prepare_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = run_experiment(&inputs, &cfg, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("window"), "{err}");
    }
}
