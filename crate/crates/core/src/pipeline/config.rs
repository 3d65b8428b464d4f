//! Run configuration: one TOML file, every tunable a key with a default.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conformal::{ConformalConfig, UncertaintyMode};
use crate::evt_core::FitOptions;
use crate::geo_graph::AdjacencyConfig;
use crate::stgcn_model::{Activation, ModelConfig};
use crate::training::{default_beta_grid, Scheme, TrainConfig};

use super::panel::CleanPolicy;
use super::synth::SynthConfig;
use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub thresholds: ThresholdSection,
    pub graph: GraphSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub evt: EvtSection,
    pub conformal: ConformalSection,
    pub metrics: MetricsSection,
    pub beta: BetaSection,
    pub run: RunSection,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub pollutant: String,
    pub max_gap: usize,
    pub missing_frac: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { pollutant: "pm25".to_string(), max_gap: 3, missing_frac: 0.20 }
    }
}

/// Exceedance thresholds per pollutant in data units, ambient-standard
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdSection(pub BTreeMap<String, f64>);

impl Default for ThresholdSection {
    fn default() -> Self {
        ThresholdSection(BTreeMap::from([
            ("pm25".to_string(), 60.0),
            ("pm10".to_string(), 100.0),
            ("no2".to_string(), 80.0),
        ]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub sigma_sq: f64,
    pub epsilon: f64,
    pub earth_radius_km: f64,
    pub spectral_tol: f64,
}

impl Default for GraphSection {
    fn default() -> Self {
        let adj = AdjacencyConfig::default();
        GraphSection {
            sigma_sq: adj.sigma_sq,
            epsilon: adj.epsilon,
            earth_radius_km: adj.earth_radius_km,
            spectral_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub k_layers: usize,
    pub lag: usize,
    pub hidden: usize,
    pub activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { k_layers: 2, lag: 7, hidden: 32, activation: Activation::Tanh }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub batch: usize,
    pub context_len: Option<usize>,
    pub warm_start: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let base = TrainConfig::default();
        TrainingSection {
            learning_rate: base.learning_rate,
            epochs: 30,
            adam_beta1: base.adam_beta1,
            adam_beta2: base.adam_beta2,
            adam_eps: base.adam_eps,
            clip_norm: base.clip_norm,
            batch: base.batch,
            context_len: None,
            warm_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvtSection {
    pub min_exceedances: usize,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub potl_raw_argument: bool,
}

impl Default for EvtSection {
    fn default() -> Self {
        let base = FitOptions::default();
        EvtSection {
            min_exceedances: base.min_exceedances,
            grad_tol: base.grad_tol,
            max_iter: base.max_iter,
            potl_raw_argument: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformalSection {
    pub rho: f64,
    pub window: usize,
    pub uncertainty_mode: UncertaintyMode,
}

impl Default for ConformalSection {
    fn default() -> Self {
        let base = ConformalConfig::default();
        ConformalSection {
            rho: base.rho,
            window: base.window,
            uncertainty_mode: base.uncertainty_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub pinball_rho: f64,
    pub crps_samples: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection { pinball_rho: 0.8, crps_samples: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaSection {
    pub grid: Vec<(f64, f64)>,
}

impl Default for BetaSection {
    fn default() -> Self {
        BetaSection { grid: default_beta_grid() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub scheme: String,
    pub seed: u64,
    /// Row where test windows start; when absent they are packed against
    /// the end of the panel.
    pub anchor: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { scheme: "short".to_string(), seed: 0, anchor: None }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        let cfg: RunConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if !(self.training.learning_rate >= 0.0) || self.training.epochs == 0 {
            return bad("training.learning_rate must be >= 0 and epochs >= 1".to_string());
        }
        if self.training.batch == 0 {
            return bad("training.batch must be at least 1".to_string());
        }
        if !(self.conformal.rho > 0.0 && self.conformal.rho < 1.0) || self.conformal.window == 0 {
            return bad("conformal.rho must lie in (0, 1) and window >= 1".to_string());
        }
        if !(self.metrics.pinball_rho > 0.0 && self.metrics.pinball_rho < 1.0) {
            return bad(format!(
                "metrics.pinball_rho must lie in (0, 1), got {}",
                self.metrics.pinball_rho
            ));
        }
        if self.metrics.crps_samples < 2 {
            return bad("metrics.crps_samples must be at least 2".to_string());
        }
        if self.beta.grid.is_empty() {
            return bad("beta.grid must contain at least one (beta1, beta2) pair".to_string());
        }
        if !(self.data.missing_frac >= 0.0 && self.data.missing_frac < 1.0) {
            return bad(format!(
                "data.missing_frac must lie in [0, 1), got {}",
                self.data.missing_frac
            ));
        }
        self.scheme()?;
        self.threshold_for(&self.data.pollutant)?;
        Ok(())
    }

    pub fn scheme(&self) -> Result<Scheme, PipelineError> {
        self.run
            .scheme
            .parse::<Scheme>()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn threshold_for(&self, pollutant: &str) -> Result<f64, PipelineError> {
        self.thresholds.0.get(pollutant).copied().ok_or_else(|| {
            PipelineError::Config(format!(
                "no threshold configured for pollutant {pollutant:?}; known: {}",
                self.thresholds.0.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn clean_policy(&self) -> CleanPolicy {
        CleanPolicy { max_gap: self.data.max_gap, missing_frac: self.data.missing_frac }
    }

    pub fn adjacency_config(&self) -> AdjacencyConfig {
        AdjacencyConfig {
            sigma_sq: self.graph.sigma_sq,
            epsilon: self.graph.epsilon,
            earth_radius_km: self.graph.earth_radius_km,
        }
    }

    pub fn model_config(&self, horizon: usize) -> ModelConfig {
        ModelConfig {
            k_layers: self.model.k_layers,
            lag: self.model.lag,
            hidden: self.model.hidden,
            horizon,
            activation: self.model.activation,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.training.learning_rate,
            epochs: self.training.epochs,
            seed,
            adam_beta1: self.training.adam_beta1,
            adam_beta2: self.training.adam_beta2,
            adam_eps: self.training.adam_eps,
            clip_norm: self.training.clip_norm,
            batch: self.training.batch,
            context_len: self.training.context_len,
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            min_exceedances: self.evt.min_exceedances,
            grad_tol: self.evt.grad_tol,
            max_iter: self.evt.max_iter,
        }
    }

    pub fn conformal_config(&self) -> ConformalConfig {
        ConformalConfig {
            rho: self.conformal.rho,
            window: self.conformal.window,
            uncertainty_mode: self.conformal.uncertainty_mode,
        }
    }
}
