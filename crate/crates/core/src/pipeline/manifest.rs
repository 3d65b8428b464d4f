//! The run manifest: everything needed to reproduce a run plus the
//! per-window outcomes it produced.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::PipelineError;

/// One station's GP fit in one window's training range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpdRecord {
    pub station_id: String,
    pub threshold: f64,
    pub scale: f64,
    pub shape: f64,
    pub n_exceed: usize,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub index: usize,
    pub test_first: NaiveDate,
    pub test_last: NaiveDate,
    pub beta1: f64,
    pub beta2: f64,
    /// Stations whose training range had too few exceedances; they train
    /// without the tail penalty in this window.
    pub pot_disabled_stations: Vec<String>,
    pub gpd: Vec<GpdRecord>,
    /// "ok", or "failed: {error}" when a stage in this window failed.
    pub status: String,
}

impl WindowRecord {
    pub fn succeeded(&self) -> bool {
        self.status == "ok"
    }
}

/// Snapshot that fully reconstructs a run: configuration, seed, pollutant
/// routing, per-window selections, and the artifact paths written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub pollutant: String,
    pub threshold: f64,
    pub scheme: String,
    pub data_source: String,
    pub stations: Vec<String>,
    pub config: RunConfig,
    pub windows: Vec<WindowRecord>,
    /// Bundle-relative paths, sorted; timing logs are excluded because
    /// they are not part of the deterministic bundle.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn failed_windows(&self) -> usize {
        self.windows.iter().filter(|w| !w.succeeded()).count()
    }
}
