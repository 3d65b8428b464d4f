use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::Days;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use estgcn::conformal::{write_interval_csv, ConformalStream, IntervalRow};
use estgcn::evt_core::{durbin_watson, extract_exceedances, fit_gpd};
use estgcn::geo_graph::{build_adjacency, laplacian_bundle, load_roster_csv, write_roster_csv};
use estgcn::metrics_stats::{dm_test, mae, mcb_test, pinball, rmse, smape};
use estgcn::pipeline::emit::{emit_plot_data, McbSummary};
use estgcn::pipeline::run::{prepare_synthetic, run_experiment, run_from_manifest, RunInputs};
use estgcn::pipeline::{load_panel_csv, write_panel_csv, PipelineError, RunConfig, SeriesPanel};
use estgcn::stgcn_model::{EstgcnModel, NormStats};
use estgcn::training::{
    effective_context, train, write_training_log, LossConfig, WindowSplit,
};

#[derive(Parser)]
#[command(
    name = "estgcn",
    version,
    about = "Spatiotemporal air quality forecasting with extreme-value-aware training"
)]
struct Cli {
    /// TOML configuration file; built-in defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured pollutant (selects the exceedance threshold).
    #[arg(long, global = true)]
    pollutant: Option<String>,
    /// Overrides the configured evaluation scheme: short, medium, or long.
    #[arg(long, global = true)]
    scheme: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean a long-format panel CSV against a station roster.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        stations: PathBuf,
    },
    /// Generate a synthetic panel with known tail parameters.
    Synth,
    /// Fit a generalized Pareto tail per station at the configured threshold.
    FitGpd {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        stations: PathBuf,
    },
    /// Build the station adjacency and report its spectral quantities.
    Graph {
        #[arg(long)]
        stations: PathBuf,
    },
    /// Train one model on the panel, holding out the last two horizons.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        stations: PathBuf,
    },
    /// Forecast one horizon past the end of the panel from a checkpoint.
    Forecast {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        stations: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Recompute point-forecast metrics from a forecast table.
    Evaluate {
        #[arg(long)]
        forecasts: PathBuf,
    },
    /// Conformal intervals and empirical coverage over a forecast table.
    Conformal {
        #[arg(long)]
        forecasts: PathBuf,
    },
    /// Diebold-Mariano comparison of two forecasters on shared actuals.
    CompareDm {
        #[arg(long)]
        data: PathBuf,
    },
    /// Rank models across cases and compute the critical distance.
    CompareMcb {
        #[arg(long)]
        losses: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        theta: f64,
    },
    /// Full rolling-window experiment producing a reproducible bundle.
    Run {
        #[arg(long, requires = "stations", conflicts_with = "from_manifest")]
        data: Option<PathBuf>,
        #[arg(long, requires = "data")]
        stations: Option<PathBuf>,
        #[arg(long)]
        from_manifest: Option<PathBuf>,
    },
    /// Derive plot-ready tables from a run bundle.
    EmitPlots {
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
}

#[derive(Debug, Deserialize)]
struct ForecastIn {
    window_id: usize,
    station_id: String,
    #[allow(dead_code)]
    date: String,
    step: usize,
    actual: f64,
    point: f64,
}

#[derive(Debug, Serialize)]
struct EvalRow {
    window_id: usize,
    station_id: String,
    n: usize,
    mae: f64,
    rmse: f64,
    smape: f64,
    pinball: f64,
}

#[derive(Debug, Serialize)]
struct GpdCliRow {
    station_id: String,
    threshold: f64,
    scale: f64,
    shape: f64,
    n_exceed: usize,
    loglik: f64,
    dw: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EdgeRow {
    station_a: String,
    station_b: String,
    weight: f64,
}

#[derive(Debug, Serialize)]
struct ForecastOutRow {
    date: chrono::NaiveDate,
    station_id: String,
    step: usize,
    point: f64,
}

#[derive(Debug, Deserialize)]
struct DmIn {
    actual: f64,
    forecast_a: f64,
    forecast_b: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(pollutant) = &cli.pollutant {
        cfg.data.pollutant = pollutant.clone();
    }
    if let Some(scheme) = &cli.scheme {
        cfg.run.scheme = scheme.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_inputs(
    cfg: &RunConfig,
    data: &Path,
    stations: &Path,
) -> Result<RunInputs, PipelineError> {
    let roster = load_roster_csv(stations)?;
    let (panel, report) = load_panel_csv(data, &roster, &cfg.clean_policy())?;
    for dropped in &report.dropped {
        eprintln!("dropped {}: {}", dropped.station_id, dropped.reason);
    }
    Ok(RunInputs { roster, panel, data_source: "ingested".to_string() })
}

fn write_csv<T: Serialize>(
    path: &Path,
    header: &[&str],
    rows: &[T],
) -> Result<(), PipelineError> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    writer.write_record(header)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_forecast_table(path: &Path) -> Result<Vec<ForecastIn>, PipelineError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record?);
    }
    if rows.is_empty() {
        return Err(PipelineError::Input(format!(
            "{} contains no forecast rows",
            path.display()
        )));
    }
    Ok(rows)
}

fn dispatch(cli: Cli) -> Result<(), PipelineError> {
    let cfg = load_config(&cli)?;
    let out = cli.out.clone();
    std::fs::create_dir_all(&out)?;
    match cli.command {
        Command::Ingest { data, stations } => cmd_ingest(&cfg, &data, &stations, &out),
        Command::Synth => cmd_synth(&cfg, &out),
        Command::FitGpd { data, stations } => cmd_fit_gpd(&cfg, &data, &stations, &out),
        Command::Graph { stations } => cmd_graph(&cfg, &stations, &out),
        Command::Train { data, stations } => cmd_train(&cfg, &data, &stations, &out),
        Command::Forecast { data, stations, model } => {
            cmd_forecast(&cfg, &data, &stations, &model, &out)
        }
        Command::Evaluate { forecasts } => cmd_evaluate(&cfg, &forecasts, &out),
        Command::Conformal { forecasts } => cmd_conformal(&cfg, &forecasts, &out),
        Command::CompareDm { data } => cmd_compare_dm(&data, &out),
        Command::CompareMcb { losses, theta } => cmd_compare_mcb(&losses, theta, &out),
        Command::Run { data, stations, from_manifest } => {
            cmd_run(&cfg, data.as_deref(), stations.as_deref(), from_manifest.as_deref(), &out)
        }
        Command::EmitPlots { bundle } => {
            let dir = bundle.unwrap_or_else(|| out.clone());
            let joined = emit_plot_data(&dir)?;
            println!("joined {joined} forecast rows; plots under {}", dir.join("plots").display());
            Ok(())
        }
    }
}

fn cmd_ingest(
    cfg: &RunConfig,
    data: &Path,
    stations: &Path,
    out: &Path,
) -> Result<(), PipelineError> {
    let roster = load_roster_csv(stations)?;
    let (panel, report) = load_panel_csv(data, &roster, &cfg.clean_policy())?;
    for dropped in &report.dropped {
        println!("dropped {}: {}", dropped.station_id, dropped.reason);
    }
    let kept = estgcn::pipeline::panel::subset_roster(&roster, &panel.station_ids)?;
    write_panel_csv(&out.join("panel.csv"), &panel)?;
    write_roster_csv(&out.join("stations.csv"), &kept)?;
    std::fs::write(
        out.join("clean_report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    println!(
        "panel: {} days x {} stations; filled {} cells; wrote {}",
        panel.n_rows(),
        panel.n_stations(),
        report.filled_cells,
        out.display()
    );
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<(), PipelineError> {
    let (inputs, truth) = prepare_synthetic(cfg)?;
    write_panel_csv(&out.join("panel.csv"), &inputs.panel)?;
    write_roster_csv(&out.join("stations.csv"), &inputs.roster)?;
    std::fs::write(out.join("truth.json"), serde_json::to_string_pretty(&truth)? + "\n")?;
    println!(
        "synthetic panel: {} days x {} stations; {} exceedance shocks (rate {:.3})",
        inputs.panel.n_rows(),
        inputs.panel.n_stations(),
        truth.shock_days,
        truth.exceedance_rate
    );
    Ok(())
}

fn cmd_fit_gpd(
    cfg: &RunConfig,
    data: &Path,
    stations: &Path,
    out: &Path,
) -> Result<(), PipelineError> {
    let inputs = load_inputs(cfg, data, stations)?;
    let threshold = cfg.threshold_for(&cfg.data.pollutant)?;
    let opts = cfg.fit_options();
    let mut rows = Vec::new();
    for (s, id) in inputs.panel.station_ids.iter().enumerate() {
        let series = inputs.panel.column(s);
        let exceedances = extract_exceedances(&series, threshold);
        if exceedances.len() < opts.min_exceedances {
            println!(
                "{id}: {} exceedances, below the minimum {}; skipped",
                exceedances.len(),
                opts.min_exceedances
            );
            continue;
        }
        let dw = durbin_watson(&exceedances);
        let fit = fit_gpd(&exceedances, &opts)?;
        println!(
            "{id}: scale={:.4} shape={:.4} n={} loglik={:.3}",
            fit.scale, fit.shape, fit.n_exceed, fit.loglik
        );
        rows.push(GpdCliRow {
            station_id: id.clone(),
            threshold: fit.threshold,
            scale: fit.scale,
            shape: fit.shape,
            n_exceed: fit.n_exceed,
            loglik: fit.loglik,
            dw,
        });
    }
    write_csv(
        &out.join("gpd_fits.csv"),
        &["station_id", "threshold", "scale", "shape", "n_exceed", "loglik", "dw"],
        &rows,
    )?;
    println!("fitted {} of {} stations at threshold {threshold}", rows.len(), inputs.panel.n_stations());
    Ok(())
}

fn cmd_graph(cfg: &RunConfig, stations: &Path, out: &Path) -> Result<(), PipelineError> {
    let roster = load_roster_csv(stations)?;
    let adjacency_cfg = cfg.adjacency_config();
    let graph = build_adjacency(&roster, &adjacency_cfg)?;
    let bundle = laplacian_bundle(&graph, cfg.graph.spectral_tol)?;
    let mut edges = Vec::new();
    for i in 0..graph.n() {
        for j in (i + 1)..graph.n() {
            let weight = graph.weight(i, j);
            if weight > 0.0 {
                edges.push(EdgeRow {
                    station_a: graph.stations()[i].id.clone(),
                    station_b: graph.stations()[j].id.clone(),
                    weight,
                });
            }
        }
    }
    write_csv(&out.join("graph.csv"), &["station_a", "station_b", "weight"], &edges)?;
    println!(
        "{} stations, {} edges, cutoff radius {:.2} km, spectral bound {:.6}",
        graph.n(),
        edges.len(),
        adjacency_cfg.cutoff_radius_km(),
        bundle.zeta_max()
    );
    if !graph.isolated().is_empty() {
        println!("isolated stations: {}", graph.isolated().join(", "));
    }
    Ok(())
}

/// Split holding out the last two horizons: validation then test.
fn tail_split(panel: &SeriesPanel, q: usize) -> Result<WindowSplit, PipelineError> {
    let total = panel.n_rows();
    if total < 2 * q + 2 {
        return Err(PipelineError::Input(format!(
            "panel has {total} rows, need more than {} for a {q}-step holdout",
            2 * q + 1
        )));
    }
    Ok(WindowSplit {
        train: 0..total - 2 * q,
        val: total - 2 * q..total - q,
        test: total - q..total,
    })
}

fn cmd_train(
    cfg: &RunConfig,
    data: &Path,
    stations: &Path,
    out: &Path,
) -> Result<(), PipelineError> {
    let inputs = load_inputs(cfg, data, stations)?;
    let panel = &inputs.panel;
    panel.ensure_complete()?;
    let roster = estgcn::pipeline::panel::subset_roster(&inputs.roster, &panel.station_ids)?;
    let threshold = cfg.threshold_for(&cfg.data.pollutant)?;
    let graph = laplacian_bundle(&build_adjacency(&roster, &cfg.adjacency_config())?, cfg.graph.spectral_tol)?;
    let q = cfg.scheme()?.horizon();
    let split = tail_split(panel, q)?;
    let opts = cfg.fit_options();
    let mut fits = Vec::new();
    let mut disabled = Vec::new();
    for s in 0..panel.n_stations() {
        let series: Vec<f64> = split.train.clone().map(|t| panel.values.get(t, s)).collect();
        let exceedances = extract_exceedances(&series, threshold);
        if exceedances.len() < opts.min_exceedances {
            fits.push(None);
            disabled.push(true);
        } else {
            fits.push(Some(fit_gpd(&exceedances, &opts)?));
            disabled.push(false);
        }
    }
    let loss = LossConfig {
        beta1: cfg.beta.grid[0].0,
        beta2: cfg.beta.grid[0].1,
        thresholds: vec![threshold; panel.n_stations()],
        gpd_fits: fits,
        potl_raw_argument: cfg.evt.potl_raw_argument,
        pot_disabled: disabled,
    };
    let columns: Vec<Vec<f64>> = (0..panel.n_stations())
        .map(|s| split.train.clone().map(|t| panel.values.get(t, s)).collect())
        .collect();
    let stats = NormStats::fit(&columns)?;
    let mut model = EstgcnModel::init(&cfg.model_config(q), graph, stats, cfg.run.seed)?;
    let train_cfg = cfg.train_config(cfg.run.seed);
    let epochs = train(&mut model, &panel.values, &split, &loss, &train_cfg)?;
    write_training_log(&out.join("training_log.csv"), &epochs)?;
    std::fs::write(out.join("model.json"), model.to_checkpoint_json() + "\n")?;
    let last = epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs with beta=({}, {}); final train loss {:.6}, val loss {:.6}",
        epochs.len(),
        loss.beta1,
        loss.beta2,
        last.train_loss,
        last.val_loss
    );
    println!("checkpoint {}", out.join("model.json").display());
    Ok(())
}

fn cmd_forecast(
    cfg: &RunConfig,
    data: &Path,
    stations: &Path,
    model_path: &Path,
    out: &Path,
) -> Result<(), PipelineError> {
    let inputs = load_inputs(cfg, data, stations)?;
    let panel = &inputs.panel;
    panel.ensure_complete()?;
    let roster = estgcn::pipeline::panel::subset_roster(&inputs.roster, &panel.station_ids)?;
    let graph = laplacian_bundle(&build_adjacency(&roster, &cfg.adjacency_config())?, cfg.graph.spectral_tol)?;
    let json = std::fs::read_to_string(model_path)?;
    let model = EstgcnModel::from_checkpoint_json(&json, graph)?;
    let context = effective_context(&cfg.train_config(0), cfg.model.lag);
    if panel.n_rows() < context {
        return Err(PipelineError::Input(format!(
            "panel has {} rows, the model needs {context} history rows",
            panel.n_rows()
        )));
    }
    let mut history = estgcn::diff_engine::Tensor::zeros(context, panel.n_stations());
    for r in 0..context {
        for s in 0..panel.n_stations() {
            history.set(r, s, panel.values.get(panel.n_rows() - context + r, s));
        }
    }
    let preds = model.forecast(&history)?;
    let last_date = *panel.timestamps.last().expect("nonempty panel");
    let mut rows = Vec::with_capacity(preds.rows() * preds.cols());
    for j in 0..preds.rows() {
        for (s, id) in panel.station_ids.iter().enumerate() {
            rows.push(ForecastOutRow {
                date: last_date + Days::new(j as u64 + 1),
                station_id: id.clone(),
                step: j,
                point: preds.get(j, s),
            });
        }
    }
    write_csv(&out.join("forecast.csv"), &["date", "station_id", "step", "point"], &rows)?;
    println!(
        "wrote {} steps x {} stations to {}",
        preds.rows(),
        preds.cols(),
        out.join("forecast.csv").display()
    );
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, forecasts: &Path, out: &Path) -> Result<(), PipelineError> {
    let rows = read_forecast_table(forecasts)?;
    let mut groups: BTreeMap<(usize, String), Vec<(f64, f64)>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.window_id, row.station_id))
            .or_default()
            .push((row.actual, row.point));
    }
    let mut table = Vec::with_capacity(groups.len());
    let mut sums = [0.0f64; 4];
    for ((window_id, station_id), pairs) in groups {
        let actual: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let point: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let row = EvalRow {
            window_id,
            station_id,
            n: actual.len(),
            mae: mae(&actual, &point)?,
            rmse: rmse(&actual, &point)?,
            smape: smape(&actual, &point)?,
            pinball: pinball(&actual, &point, cfg.metrics.pinball_rho)?,
        };
        sums[0] += row.mae;
        sums[1] += row.rmse;
        sums[2] += row.smape;
        sums[3] += row.pinball;
        table.push(row);
    }
    write_csv(
        &out.join("metrics.csv"),
        &["window_id", "station_id", "n", "mae", "rmse", "smape", "pinball"],
        &table,
    )?;
    let k = table.len() as f64;
    println!(
        "{} series; mean mae {:.4} rmse {:.4} smape {:.4} pinball {:.4}",
        table.len(),
        sums[0] / k,
        sums[1] / k,
        sums[2] / k,
        sums[3] / k
    );
    Ok(())
}

fn cmd_conformal(cfg: &RunConfig, forecasts: &Path, out: &Path) -> Result<(), PipelineError> {
    let rows = read_forecast_table(forecasts)?;
    let mut by_station: BTreeMap<String, Vec<ForecastIn>> = BTreeMap::new();
    for row in rows {
        by_station.entry(row.station_id.clone()).or_default().push(row);
    }
    let mut intervals = Vec::new();
    let mut covered = 0usize;
    let mut evaluated = 0usize;
    for (station_id, series) in by_station {
        let mut stream = ConformalStream::new(cfg.conformal_config())?;
        for row in series {
            if !stream.is_empty() {
                let iv = stream.interval(row.point)?;
                if iv.lower <= row.actual && row.actual <= iv.upper {
                    covered += 1;
                }
                evaluated += 1;
                intervals.push(IntervalRow {
                    window_id: row.window_id,
                    station_id: station_id.clone(),
                    step: row.step,
                    point: iv.point,
                    lower: iv.lower,
                    upper: iv.upper,
                    kappa: iv.kappa,
                });
            }
            stream.observe(row.actual, row.point)?;
        }
    }
    write_interval_csv(&out.join("intervals.csv"), &intervals)?;
    if evaluated == 0 {
        return Err(PipelineError::Input(
            "every station has a single row; nothing to calibrate against".to_string(),
        ));
    }
    println!(
        "coverage {covered}/{evaluated} = {:.3} (target {:.2})",
        covered as f64 / evaluated as f64,
        1.0 - cfg.conformal.rho
    );
    Ok(())
}

fn cmd_compare_dm(data: &Path, out: &Path) -> Result<(), PipelineError> {
    let mut reader = csv::Reader::from_path(data)
        .map_err(|e| PipelineError::Input(format!("{}: {e}", data.display())))?;
    let mut actual = Vec::new();
    let mut fc_a = Vec::new();
    let mut fc_b = Vec::new();
    for record in reader.deserialize() {
        let row: DmIn = record?;
        actual.push(row.actual);
        fc_a.push(row.forecast_a);
        fc_b.push(row.forecast_b);
    }
    let result = dm_test(&actual, &fc_a, &fc_b)?;
    std::fs::write(out.join("dm.json"), serde_json::to_string_pretty(&result)? + "\n")?;
    match (result.statistic, result.p_value) {
        (Some(stat), Some(p)) => println!(
            "dm statistic {stat:.4}, one-sided p {p:.6} (positive means the second forecaster is better)"
        ),
        _ => println!(
            "dm statistic undefined: the loss differential is degenerate (mean {:.6}, sd {:.6})",
            result.mean_diff, result.sd_diff
        ),
    }
    Ok(())
}

fn cmd_compare_mcb(losses: &Path, theta: f64, out: &Path) -> Result<(), PipelineError> {
    let mut reader = csv::Reader::from_path(losses)
        .map_err(|e| PipelineError::Input(format!("{}: {e}", losses.display())))?;
    let models: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(models.len());
        for field in record.iter() {
            row.push(field.trim().parse::<f64>().map_err(|e| {
                PipelineError::Input(format!("line {}: bad loss {field:?}: {e}", idx + 2))
            })?);
        }
        rows.push(row);
    }
    let result = mcb_test(&rows, theta)?;
    let summary = McbSummary { models: models.clone(), result };
    std::fs::write(out.join("mcb.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let mut order: Vec<usize> = (0..models.len()).collect();
    order.sort_by(|&a, &b| {
        summary.result.mean_ranks[a].total_cmp(&summary.result.mean_ranks[b])
    });
    for &i in &order {
        println!("{}: mean rank {:.4}", models[i], summary.result.mean_ranks[i]);
    }
    let (lo, hi) = summary.result.reference_interval;
    println!(
        "critical distance {:.4}; reference interval [{lo:.4}, {hi:.4}]",
        summary.result.critical_distance
    );
    Ok(())
}

fn cmd_run(
    cfg: &RunConfig,
    data: Option<&Path>,
    stations: Option<&Path>,
    from_manifest: Option<&Path>,
    out: &Path,
) -> Result<(), PipelineError> {
    let bundle = match (from_manifest, data, stations) {
        (Some(manifest), _, _) => run_from_manifest(manifest, out)?,
        (None, Some(data), Some(stations)) => {
            let inputs = load_inputs(cfg, data, stations)?;
            run_experiment(&inputs, cfg, out)?
        }
        _ => {
            let (inputs, _) = prepare_synthetic(cfg)?;
            run_experiment(&inputs, cfg, out)?
        }
    };
    for window in &bundle.manifest.windows {
        println!(
            "window {:02} [{} .. {}]: {}",
            window.index, window.test_first, window.test_last, window.status
        );
    }
    println!("bundle written to {}", bundle.out_dir.display());
    if bundle.failed_windows > 0 {
        return Err(PipelineError::PartialFailure {
            failed: bundle.failed_windows,
            total: bundle.manifest.windows.len(),
        });
    }
    Ok(())
}
