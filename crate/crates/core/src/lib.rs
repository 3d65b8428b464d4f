//! Spatiotemporal forecasting of air-quality extremes on a station graph.
//!
//! The crate couples a graph-convolutional spatial encoder and a per-station
//! LSTM with extreme value theory: exceedances over a regulatory threshold are
//! modeled by a generalized Pareto distribution, and the fitted negative
//! log-likelihood enters the training objective as a penalty on above-threshold
//! predictions. Around the point forecasts, windowed conformal scores produce
//! distribution-free prediction intervals.
//!
//! Module map:
//! - [`geo_graph`]: Haversine distances, Gaussian-kernel adjacency, Laplacians.
//! - [`evt_core`]: block maxima, exceedances, GP fitting by BFGS, mean-excess
//!   diagnostics, Durbin-Watson, and the POT loss term.
//! - [`diff_engine`]: a minimal reverse-mode autodiff tape over dense tensors.
//! - [`stgcn_model`]: the spatial block, LSTM temporal block, and dense head.
//! - [`training`]: hybrid loss, Adam loop, beta selection, rolling windows.
//! - [`metrics_stats`]: forecast metrics plus Diebold-Mariano and
//!   multiple-comparison-with-the-best tests.
//! - [`conformal`]: windowed conformal scores and interval construction.
//! - [`pipeline`]: CSV ingestion, synthetic panels, experiment orchestration,
//!   and the command-line entry points.

pub mod conformal;
pub mod diff_engine;
pub mod evt_core;
pub mod geo_graph;
pub mod metrics_stats;
pub mod pipeline;
pub mod stgcn_model;
pub mod training;
pub(crate) mod util;
