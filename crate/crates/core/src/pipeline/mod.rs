//! Experiment orchestration: panel ingestion and cleaning, synthetic data,
//! configuration, rolling-window runs, and result emission.

pub mod config;
pub mod emit;
pub mod manifest;
pub mod panel;
pub mod run;
pub mod synth;

use thiserror::Error;

use crate::conformal::ConformalError;
use crate::evt_core::EvtError;
use crate::geo_graph::GraphError;
use crate::metrics_stats::MetricsError;
use crate::stgcn_model::ModelError;
use crate::training::TrainError;

pub use config::RunConfig;
pub use manifest::{GpdRecord, RunManifest, WindowRecord};
pub use panel::{CleanPolicy, CleanReport, SeriesPanel, load_panel_csv, write_panel_csv};
pub use run::{RunBundle, RunInputs, run_experiment, run_from_manifest};
pub use synth::{SynthConfig, SynthTruth, generate_synthetic_panel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Input(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Evt(#[from] EvtError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{failed} of {total} windows failed; the manifest records each failure")]
    PartialFailure { failed: usize, total: usize },
}

impl PipelineError {
    /// Process exit code: 2 for input and configuration problems, 3 for
    /// numeric failures inside a stage, 4 for a bundle with failed windows.
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::Input(_)
            | PipelineError::Config(_)
            | PipelineError::Graph(_)
            | PipelineError::Csv(_)
            | PipelineError::Json(_)
            | PipelineError::Io(_) => 2,
            PipelineError::Evt(_)
            | PipelineError::Model(_)
            | PipelineError::Train(_)
            | PipelineError::Metrics(_)
            | PipelineError::Conformal(_) => 3,
            PipelineError::PartialFailure { .. } => 4,
        }
    }
}
