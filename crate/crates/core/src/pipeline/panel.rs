//! Long-format panel CSV ingestion, gap cleaning, and the in-memory panel.

use std::collections::HashMap;
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::diff_engine::Tensor;
use crate::geo_graph::StationMeta;

use super::PipelineError;

/// Daily multivariate series: one row per date, one column per station.
/// Construction allows missing cells (NaN) so cleaning can run; a cleaned
/// panel passes `ensure_complete`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPanel {
    pub timestamps: Vec<NaiveDate>,
    pub station_ids: Vec<String>,
    pub values: Tensor,
}

impl SeriesPanel {
    pub fn new(
        timestamps: Vec<NaiveDate>,
        station_ids: Vec<String>,
        values: Tensor,
    ) -> Result<Self, PipelineError> {
        if values.rows() != timestamps.len() || values.cols() != station_ids.len() {
            return Err(PipelineError::Input(format!(
                "panel shape {}x{} does not match {} timestamps x {} stations",
                values.rows(),
                values.cols(),
                timestamps.len(),
                station_ids.len()
            )));
        }
        for pair in timestamps.windows(2) {
            if pair[1] != pair[0] + Days::new(1) {
                return Err(PipelineError::Input(format!(
                    "timestamps must advance by exactly one day, got {} after {}",
                    pair[1], pair[0]
                )));
            }
        }
        Ok(SeriesPanel { timestamps, station_ids, values })
    }

    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn column(&self, station: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|t| self.values.get(t, station)).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.n_stations()).map(|s| self.column(s)).collect()
    }

    /// Errors on any remaining missing or non-finite cell.
    pub fn ensure_complete(&self) -> Result<(), PipelineError> {
        for t in 0..self.n_rows() {
            for s in 0..self.n_stations() {
                if !self.values.get(t, s).is_finite() {
                    return Err(PipelineError::Input(format!(
                        "missing value for station {} on {}",
                        self.station_ids[s], self.timestamps[t]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Gap handling for ingestion: runs of up to `max_gap` consecutive missing
/// days are forward-filled; stations missing more than `missing_frac` of
/// all days, or any gap that cannot be filled, are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanPolicy {
    pub max_gap: usize,
    pub missing_frac: f64,
}

impl Default for CleanPolicy {
    fn default() -> Self {
        CleanPolicy { max_gap: 3, missing_frac: 0.20 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CleanReport {
    pub dropped: Vec<DroppedStation>,
    pub filled_cells: usize,
    pub retained: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedStation {
    pub station_id: String,
    pub reason: String,
}

fn is_missing_marker(field: &str) -> bool {
    let trimmed = field.trim();
    trimmed.is_empty() || trimmed.eq_ignore_ascii_case("na") || trimmed.eq_ignore_ascii_case("nan")
}

/// Reads a long-format CSV with header `date,station_id,value`, pivots it
/// onto a contiguous daily axis covering the observed date range, and
/// cleans it under `policy`. Station columns follow roster order; stations
/// the roster does not list are an input error, as are duplicate
/// (date, station) cells.
pub fn load_panel_csv(
    path: &Path,
    roster: &[StationMeta],
    policy: &CleanPolicy,
) -> Result<(SeriesPanel, CleanReport), PipelineError> {
    if !(policy.missing_frac >= 0.0 && policy.missing_frac < 1.0) {
        return Err(PipelineError::Config(format!(
            "missing_frac must lie in [0, 1), got {}",
            policy.missing_frac
        )));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| {
        PipelineError::Input(format!("{}: {e}", path.display()))
    })?;
    let headers = reader.headers()?.clone();
    let expected = ["date", "station_id", "value"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(PipelineError::Input(format!(
            "expected header `date,station_id,value`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let station_index: HashMap<&str, usize> =
        roster.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let mut cells: Vec<(NaiveDate, usize, f64)> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx as u64 + 2;
        let record = record.map_err(|e| PipelineError::Input(format!("line {line}: {e}")))?;
        let line = record.position().map(|p| p.line()).unwrap_or(line);
        let field = |i: usize, name: &str| -> Result<&str, PipelineError> {
            record
                .get(i)
                .ok_or_else(|| PipelineError::Input(format!("line {line}: missing {name} field")))
        };
        let date = NaiveDate::parse_from_str(field(0, "date")?.trim(), "%Y-%m-%d")
            .map_err(|e| PipelineError::Input(format!("line {line}: bad date: {e}")))?;
        let id = field(1, "station_id")?.trim();
        let station = *station_index.get(id).ok_or_else(|| {
            PipelineError::Input(format!("line {line}: station {id:?} is not in the roster"))
        })?;
        let raw = field(2, "value")?;
        let value = if is_missing_marker(raw) {
            f64::NAN
        } else {
            raw.trim()
                .parse::<f64>()
                .map_err(|e| PipelineError::Input(format!("line {line}: bad value {raw:?}: {e}")))?
        };
        cells.push((date, station, value));
    }
    if cells.is_empty() {
        return Err(PipelineError::Input(format!("{} contains no data rows", path.display())));
    }
    let first = cells.iter().map(|c| c.0).min().unwrap();
    let last = cells.iter().map(|c| c.0).max().unwrap();
    let n_rows = (last - first).num_days() as usize + 1;
    let mut grid = Tensor::filled(n_rows, roster.len(), f64::NAN);
    let mut seen = vec![false; n_rows * roster.len()];
    for (date, station, value) in cells {
        let row = (date - first).num_days() as usize;
        let flat = row * roster.len() + station;
        if seen[flat] {
            return Err(PipelineError::Input(format!(
                "duplicate cell for station {} on {}",
                roster[station].id, date
            )));
        }
        seen[flat] = true;
        grid.set(row, station, value);
    }
    let timestamps: Vec<NaiveDate> =
        (0..n_rows).map(|t| first + Days::new(t as u64)).collect();
    clean_panel(timestamps, roster, grid, policy)
}

fn clean_panel(
    timestamps: Vec<NaiveDate>,
    roster: &[StationMeta],
    grid: Tensor,
    policy: &CleanPolicy,
) -> Result<(SeriesPanel, CleanReport), PipelineError> {
    let n_rows = timestamps.len();
    let mut report = CleanReport::default();
    let mut kept_columns: Vec<(usize, Vec<f64>)> = Vec::new();
    for (s, station) in roster.iter().enumerate() {
        let mut column: Vec<f64> = (0..n_rows).map(|t| grid.get(t, s)).collect();
        let missing = column.iter().filter(|v| v.is_nan()).count();
        let frac = missing as f64 / n_rows as f64;
        if frac > policy.missing_frac {
            report.dropped.push(DroppedStation {
                station_id: station.id.clone(),
                reason: format!(
                    "missing {missing} of {n_rows} days ({:.1}%), above the {:.1}% limit",
                    100.0 * frac,
                    100.0 * policy.missing_frac
                ),
            });
            continue;
        }
        match forward_fill(&mut column, policy.max_gap) {
            Ok(filled) => {
                report.filled_cells += filled;
                kept_columns.push((s, column));
            }
            Err(reason) => {
                let reason = match reason {
                    Gap::Leading(len) => format!(
                        "no observation before {}; {len} leading days cannot be filled",
                        timestamps[len - 1]
                    ),
                    Gap::Run { start, len } => format!(
                        "gap of {len} days starting {} exceeds the {}-day forward-fill limit",
                        timestamps[start], policy.max_gap
                    ),
                };
                report.dropped.push(DroppedStation { station_id: station.id.clone(), reason });
            }
        }
    }
    if kept_columns.is_empty() {
        return Err(PipelineError::Input(
            "every station was dropped during cleaning".to_string(),
        ));
    }
    let mut values = Tensor::zeros(n_rows, kept_columns.len());
    let mut ids = Vec::with_capacity(kept_columns.len());
    for (out_col, (s, column)) in kept_columns.iter().enumerate() {
        ids.push(roster[*s].id.clone());
        for (t, v) in column.iter().enumerate() {
            values.set(t, out_col, *v);
        }
    }
    report.retained = ids.clone();
    let panel = SeriesPanel::new(timestamps, ids, values)?;
    panel.ensure_complete()?;
    Ok((panel, report))
}

enum Gap {
    Leading(usize),
    Run { start: usize, len: usize },
}

/// Replaces missing runs of length at most `max_gap` with the preceding
/// value, returning the number of cells filled. A leading run or a run
/// longer than `max_gap` aborts with its location.
fn forward_fill(column: &mut [f64], max_gap: usize) -> Result<usize, Gap> {
    let mut filled = 0usize;
    let mut t = 0usize;
    while t < column.len() {
        if !column[t].is_nan() {
            t += 1;
            continue;
        }
        let start = t;
        while t < column.len() && column[t].is_nan() {
            t += 1;
        }
        let len = t - start;
        if start == 0 {
            return Err(Gap::Leading(len));
        }
        if len > max_gap {
            return Err(Gap::Run { start, len });
        }
        let fill = column[start - 1];
        for cell in column.iter_mut().take(t).skip(start) {
            *cell = fill;
        }
        filled += len;
    }
    Ok(filled)
}

/// Writes the panel in the same long format `load_panel_csv` reads, one
/// row per (date, station) in date-major order.
pub fn write_panel_csv(path: &Path, panel: &SeriesPanel) -> Result<(), PipelineError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["date", "station_id", "value"])?;
    for t in 0..panel.n_rows() {
        let date = panel.timestamps[t].format("%Y-%m-%d").to_string();
        for s in 0..panel.n_stations() {
            writer.write_record([
                date.as_str(),
                panel.station_ids[s].as_str(),
                &panel.values.get(t, s).to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Roster entries for the panel's stations, in panel column order.
pub fn subset_roster(
    roster: &[StationMeta],
    ids: &[String],
) -> Result<Vec<StationMeta>, PipelineError> {
    let by_id: HashMap<&str, &StationMeta> =
        roster.iter().map(|s| (s.id.as_str(), s)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|s| (*s).clone())
                .ok_or_else(|| PipelineError::Input(format!("station {id:?} is not in the roster")))
        })
        .collect()
}
