//! Plot-ready tables derived from a run bundle. Every output is a plain
//! CSV under `plots/`; a bundle with no usable inputs still gets each file
//! with its header row.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::evt_core::mean_excess_curve;
use crate::metrics_stats::McbResult;

use super::PipelineError;

/// Mean-excess grid resolution between the median and the upper tail.
const MEAN_EXCESS_POINTS: usize = 40;
const MEAN_EXCESS_LOW_Q: f64 = 0.50;
const MEAN_EXCESS_HIGH_Q: f64 = 0.975;

/// Comparison summary persisted as `results/mcb.json` by the comparison
/// command, consumed here for the rank chart.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McbSummary {
    pub models: Vec<String>,
    pub result: McbResult,
}

#[derive(Debug, Serialize, Deserialize)]
struct JoinedRow {
    window_id: usize,
    station_id: String,
    date: String,
    step: usize,
    actual: f64,
    point: f64,
    lower: f64,
    upper: f64,
}

#[derive(Debug, Serialize)]
struct MeanExcessRow<'a> {
    station_id: &'a str,
    tau: f64,
    mean_excess: Option<f64>,
    ci_lower: Option<f64>,
    ci_upper: Option<f64>,
    n_exceed: usize,
}

#[derive(Debug, Serialize)]
struct RankRow<'a> {
    model: &'a str,
    mean_rank: f64,
    ref_lower: f64,
    ref_upper: f64,
}

#[derive(Debug, Deserialize)]
struct ForecastIn {
    window_id: usize,
    station_id: String,
    date: String,
    step: usize,
    actual: f64,
    point: f64,
}

#[derive(Debug, Deserialize)]
struct IntervalIn {
    window_id: usize,
    station_id: String,
    step: usize,
    #[allow(dead_code)]
    point: f64,
    lower: f64,
    upper: f64,
    #[allow(dead_code)]
    kappa: f64,
}

#[derive(Debug, Deserialize)]
struct PanelIn {
    #[allow(dead_code)]
    date: String,
    station_id: String,
    value: f64,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record?);
    }
    Ok(rows)
}

fn write_rows<T: Serialize>(
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

/// Forecast trajectories joined with their interval bounds, one row per
/// (window, station, step).
fn emit_forecast_vs_actual(results: &Path, plots: &Path) -> Result<usize, PipelineError> {
    let forecasts: Vec<ForecastIn> = read_rows(&results.join("forecasts.csv"))?;
    let intervals: Vec<IntervalIn> = read_rows(&results.join("intervals.csv"))?;
    let mut bounds: BTreeMap<(usize, String, usize), (f64, f64)> = BTreeMap::new();
    for row in intervals {
        bounds.insert((row.window_id, row.station_id, row.step), (row.lower, row.upper));
    }
    let mut joined = Vec::with_capacity(forecasts.len());
    for f in forecasts {
        let key = (f.window_id, f.station_id.clone(), f.step);
        let (lower, upper) = bounds.get(&key).copied().ok_or_else(|| {
            PipelineError::Input(format!(
                "forecast row (window {}, station {}, step {}) has no interval row",
                f.window_id, f.station_id, f.step
            ))
        })?;
        joined.push(JoinedRow {
            window_id: f.window_id,
            station_id: f.station_id,
            date: f.date,
            step: f.step,
            actual: f.actual,
            point: f.point,
            lower,
            upper,
        });
    }
    write_rows(
        &plots.join("forecast_vs_actual.csv"),
        &["window_id", "station_id", "date", "step", "actual", "point", "lower", "upper"],
        &joined,
    )?;
    Ok(joined.len())
}

/// Empirical mean-excess curves per station over a quantile-spaced
/// threshold grid; grid points with too few exceedances keep empty cells.
fn emit_mean_excess(results: &Path, plots: &Path) -> Result<(), PipelineError> {
    let cells: Vec<PanelIn> = read_rows(&results.join("panel.csv"))?;
    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for cell in cells {
        series.entry(cell.station_id).or_default().push(cell.value);
    }
    let mut rows = Vec::new();
    let mut storage: Vec<(String, Vec<(f64, Option<f64>, Option<f64>, Option<f64>, usize)>)> =
        Vec::new();
    for (station_id, values) in &series {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let quantile = |q: f64| -> f64 {
            let idx = (q * (sorted.len() - 1) as f64).round() as usize;
            sorted[idx.min(sorted.len() - 1)]
        };
        let low = quantile(MEAN_EXCESS_LOW_Q);
        let high = quantile(MEAN_EXCESS_HIGH_Q);
        if !(high > low) {
            continue;
        }
        let step = (high - low) / (MEAN_EXCESS_POINTS - 1) as f64;
        let grid: Vec<f64> =
            (0..MEAN_EXCESS_POINTS).map(|i| low + step * i as f64).collect();
        let curve = mean_excess_curve(values, &grid)?;
        let mut pts = Vec::with_capacity(grid.len());
        for i in 0..curve.thresholds().len() {
            pts.push((
                curve.thresholds()[i],
                curve.mean_excess()[i],
                curve.ci_lower()[i],
                curve.ci_upper()[i],
                curve.n_exceed()[i],
            ));
        }
        storage.push((station_id.clone(), pts));
    }
    for (station_id, pts) in &storage {
        for (tau, me, lo, hi, n) in pts {
            rows.push(MeanExcessRow {
                station_id,
                tau: *tau,
                mean_excess: *me,
                ci_lower: *lo,
                ci_upper: *hi,
                n_exceed: *n,
            });
        }
    }
    write_rows(
        &plots.join("mean_excess.csv"),
        &["station_id", "tau", "mean_excess", "ci_lower", "ci_upper", "n_exceed"],
        &rows,
    )
}

/// Rank chart rows from a stored comparison summary, best rank first.
fn emit_mcb_ranks(results: &Path, plots: &Path) -> Result<(), PipelineError> {
    let path = results.join("mcb.json");
    let header = ["model", "mean_rank", "ref_lower", "ref_upper"];
    let out = plots.join("mcb_ranks.csv");
    if !path.exists() {
        return write_rows::<RankRow>(&out, &header, &[]);
    }
    let summary: McbSummary = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    if summary.models.len() != summary.result.mean_ranks.len() {
        return Err(PipelineError::Input(format!(
            "mcb summary lists {} models but {} mean ranks",
            summary.models.len(),
            summary.result.mean_ranks.len()
        )));
    }
    let (ref_lower, ref_upper) = summary.result.reference_interval;
    let mut order: Vec<usize> = (0..summary.models.len()).collect();
    order.sort_by(|&a, &b| {
        summary.result.mean_ranks[a].total_cmp(&summary.result.mean_ranks[b])
    });
    let rows: Vec<RankRow> = order
        .iter()
        .map(|&i| RankRow {
            model: &summary.models[i],
            mean_rank: summary.result.mean_ranks[i],
            ref_lower,
            ref_upper,
        })
        .collect();
    write_rows(&out, &header, &rows)
}

/// Derives the `plots/` tables from the `results/` tables of a bundle.
/// Returns the number of joined forecast rows.
pub fn emit_plot_data(bundle_dir: &Path) -> Result<usize, PipelineError> {
    let results = bundle_dir.join("results");
    let plots = bundle_dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    let joined = emit_forecast_vs_actual(&results, &plots)?;
    emit_mean_excess(&results, &plots)?;
    emit_mcb_ranks(&results, &plots)?;
    Ok(joined)
}
