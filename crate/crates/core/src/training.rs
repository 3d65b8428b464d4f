//! Hybrid-loss training for the E-STGCN forecaster.
//!
//! The loss blends squared error with a POT tail penalty: predictions at or
//! below a station's threshold cost `(pred - target)^2`, predictions above
//! it cost `beta1 * (pred - target)^2 + beta2 * POTL(pred)` where `POTL` is
//! the negative log-density of the station's fitted GP exceedance tail.
//! Branch membership is decided per element from the de-normalized
//! prediction, so the gate and the penalty act in data units.
//!
//! Optimization is Adam over mini-batches of sliding (context, horizon)
//! samples with global gradient-norm clipping. Runs are deterministic for a
//! seed: sample shuffling is the only randomness and it comes from a seeded
//! generator, while batch assembly and the parameter update order are fixed.

use std::cmp::Ordering;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff_engine::{DiffError, Tape, Tensor, Var};
use crate::evt_core::{
    pot_loss, pot_loss_local, pot_loss_raw, pot_loss_raw_local, EvtError, GpdFit,
};
use crate::stgcn_model::{EstgcnModel, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("beta weights must be finite, nonnegative, and not both zero (beta1 = {beta1}, beta2 = {beta2})")]
    BadBetas { beta1: f64, beta2: f64 },
    #[error("station index {station} is out of range for {n} stations")]
    StationOutOfRange { station: usize, n: usize },
    #[error("station index {station}: threshold is not finite")]
    BadThreshold { station: usize },
    #[error("station index {station}: beta2 > 0 requires a GP tail fit")]
    MissingFit { station: usize },
    #[error("station index {station}: gate threshold {gate} differs from the fitted threshold {fitted}")]
    ThresholdMismatch { station: usize, gate: f64, fitted: f64 },
    #[error("{what} length {got} does not match station count {expected}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("{what} shape {got_rows}x{got_cols} does not match {rows}x{cols}")]
    ShapeMismatch { what: &'static str, rows: usize, cols: usize, got_rows: usize, got_cols: usize },
    #[error("bad training config: {what}")]
    BadTrainConfig { what: &'static str },
    #[error("bad split: {what}")]
    BadSplit { what: String },
    #[error("window {index} infeasible: {detail}")]
    InfeasibleWindow { index: usize, detail: String },
    #[error("{split} rows [{start}, {end}) cannot host a single (context {context}, horizon {horizon}) sample")]
    InsufficientSamples { split: &'static str, start: usize, end: usize, context: usize, horizon: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}{}", station_suffix(.station))]
    NanLoss { epoch: usize, batch: usize, station: Option<usize> },
    #[error("beta grid is empty")]
    EmptyGrid,
    #[error("every beta candidate failed training")]
    AllBetaCandidatesFailed,
    #[error("unknown scheme {0:?}, expected short, medium, or long")]
    UnknownScheme(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Evt(#[from] EvtError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("csv write failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn station_suffix(station: &Option<usize>) -> String {
    match station {
        Some(s) => format!(", station index {s}"),
        None => String::new(),
    }
}

/// Per-station loss configuration shared by the scalar and on-tape paths.
/// `thresholds[s]` gates the branch for station `s`; when `beta2 > 0` every
/// station with the penalty enabled needs a GP fit whose threshold equals
/// its gate, because the tail penalty is evaluated against that fit.
/// `potl_raw_argument` switches the penalty argument from the exceedance
/// `pred - threshold` to the raw prediction level. `pot_disabled[s]` drops
/// the penalty for station `s` (its exceedances keep the `beta1` squared
/// error), used for stations whose training range has too few exceedances
/// to support a fit; an empty vector enables the penalty everywhere.
#[derive(Debug, Clone)]
pub struct LossConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub thresholds: Vec<f64>,
    pub gpd_fits: Vec<Option<GpdFit>>,
    pub potl_raw_argument: bool,
    pub pot_disabled: Vec<bool>,
}

impl LossConfig {
    fn pot_active(&self, station: usize) -> bool {
        self.beta2 > 0.0 && !self.pot_disabled.get(station).copied().unwrap_or(false)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        validate_betas(self.beta1, self.beta2)?;
        if self.gpd_fits.len() != self.thresholds.len() {
            return Err(TrainError::LengthMismatch {
                what: "gpd_fits",
                expected: self.thresholds.len(),
                got: self.gpd_fits.len(),
            });
        }
        if !self.pot_disabled.is_empty() && self.pot_disabled.len() != self.thresholds.len() {
            return Err(TrainError::LengthMismatch {
                what: "pot_disabled",
                expected: self.thresholds.len(),
                got: self.pot_disabled.len(),
            });
        }
        for (station, tau) in self.thresholds.iter().enumerate() {
            if !tau.is_finite() {
                return Err(TrainError::BadThreshold { station });
            }
            if self.pot_active(station) {
                let fit = self.gpd_fits[station]
                    .as_ref()
                    .ok_or(TrainError::MissingFit { station })?;
                if fit.threshold != *tau {
                    return Err(TrainError::ThresholdMismatch {
                        station,
                        gate: *tau,
                        fitted: fit.threshold,
                    });
                }
            }
        }
        Ok(())
    }
}

fn validate_betas(beta1: f64, beta2: f64) -> Result<(), TrainError> {
    let bad = !beta1.is_finite() || !beta2.is_finite() || beta1 < 0.0 || beta2 < 0.0;
    if bad || beta1 + beta2 <= 0.0 {
        return Err(TrainError::BadBetas { beta1, beta2 });
    }
    Ok(())
}

/// Hybrid loss for a single (prediction, target) pair in data units.
/// At or below the station threshold this is plain squared error; above it
/// the squared error is weighted by `beta1` and the GP tail penalty enters
/// with weight `beta2`. The fit is only consulted on the exceedance branch.
pub fn hybrid_loss(pred: f64, target: f64, station: usize, cfg: &LossConfig) -> Result<f64, TrainError> {
    validate_betas(cfg.beta1, cfg.beta2)?;
    let n = cfg.thresholds.len();
    if station >= n {
        return Err(TrainError::StationOutOfRange { station, n });
    }
    let tau = cfg.thresholds[station];
    if !tau.is_finite() {
        return Err(TrainError::BadThreshold { station });
    }
    let se = (pred - target).powi(2);
    if pred <= tau {
        return Ok(se);
    }
    if !cfg.pot_active(station) {
        return Ok(cfg.beta1 * se);
    }
    let fit = cfg
        .gpd_fits
        .get(station)
        .and_then(|f| f.as_ref())
        .ok_or(TrainError::MissingFit { station })?;
    if fit.threshold != tau {
        return Err(TrainError::ThresholdMismatch { station, gate: tau, fitted: fit.threshold });
    }
    let potl = if cfg.potl_raw_argument { pot_loss_raw(pred, fit)? } else { pot_loss(pred, fit)? };
    Ok(cfg.beta1 * se + cfg.beta2 * potl)
}

/// Panel hybrid loss as a differentiable scalar: the mean over stations and
/// horizon steps of the per-element hybrid loss. `pred` is the de-normalized
/// prediction node, stations by steps; `target` matches its shape in data
/// units. Branches are classified from the prediction values and entered as
/// constant masks, with the exceedance penalty rebuilt on tape from the GP
/// branch active at each element so gradients flow through the prediction
/// only.
pub fn panel_loss_on_tape<'t>(
    tape: &'t Tape,
    pred: Var<'t>,
    target: &Tensor,
    cfg: &LossConfig,
) -> Result<Var<'t>, TrainError> {
    cfg.validate()?;
    let (rows, cols) = pred.shape();
    if rows != cfg.thresholds.len() {
        return Err(TrainError::LengthMismatch {
            what: "prediction rows",
            expected: cfg.thresholds.len(),
            got: rows,
        });
    }
    if target.rows() != rows || target.cols() != cols {
        return Err(TrainError::ShapeMismatch {
            what: "target",
            rows,
            cols,
            got_rows: target.rows(),
            got_cols: target.cols(),
        });
    }
    let values = pred.value();
    let mut se_weight = Tensor::zeros(rows, cols);
    let mut pot_weight = Tensor::zeros(rows, cols);
    let mut affine_slope = Tensor::zeros(rows, cols);
    let mut affine_const = Tensor::zeros(rows, cols);
    let mut log_coef = Tensor::zeros(rows, cols);
    let mut u_slope = Tensor::zeros(rows, cols);
    let mut u_const = Tensor::filled(rows, cols, 1.0);
    let mut any_pot = false;
    for station in 0..rows {
        let tau = cfg.thresholds[station];
        for step in 0..cols {
            let x = values.get(station, step);
            if x <= tau {
                se_weight.set(station, step, 1.0);
                continue;
            }
            se_weight.set(station, step, cfg.beta1);
            if !cfg.pot_active(station) {
                continue;
            }
            let fit = cfg.gpd_fits[station]
                .as_ref()
                .ok_or(TrainError::MissingFit { station })?;
            let local = if cfg.potl_raw_argument {
                pot_loss_raw_local(x, fit)?
            } else {
                pot_loss_local(x, fit)?
            };
            any_pot = true;
            pot_weight.set(station, step, cfg.beta2);
            affine_slope.set(station, step, local.affine_slope);
            affine_const.set(station, step, local.affine_const);
            log_coef.set(station, step, local.log_coef);
            u_slope.set(station, step, local.u_slope);
            u_const.set(station, step, local.u_const);
        }
    }
    let target_leaf = tape.leaf(target.clone())?;
    let diff = tape.sub(pred, target_leaf)?;
    let se = tape.mul(diff, diff)?;
    let weighted_se = tape.mul(se, tape.leaf(se_weight)?)?;
    let total = if any_pot {
        // Elements not on the exceedance branch carry inert coefficients
        // (weight 0, log argument 1) so they contribute nothing to either
        // the value or the gradient.
        let affine = tape.add(tape.mul(tape.leaf(affine_slope)?, pred)?, tape.leaf(affine_const)?)?;
        let u = tape.add(tape.mul(tape.leaf(u_slope)?, pred)?, tape.leaf(u_const)?)?;
        let pot = tape.add(affine, tape.mul(tape.leaf(log_coef)?, tape.log(u)?)?)?;
        tape.add(weighted_se, tape.mul(tape.leaf(pot_weight)?, pot)?)?
    } else {
        weighted_se
    };
    Ok(tape.mean(total)?)
}

/// Optimizer and loop hyperparameters. `context_len` is the history length
/// fed to each training sample; it defaults to twice the model lag (and is
/// never less than the lag) so the recurrent state warms up before the
/// forecast origin. `learning_rate` may be zero, which makes every update a
/// bitwise no-op while still exercising the full loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub batch: usize,
    pub context_len: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            batch: 8,
            context_len: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what| Err(TrainError::BadTrainConfig { what });
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("learning_rate must be finite and nonnegative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if !self.clip_norm.is_finite() || self.clip_norm <= 0.0 {
            return bad("clip_norm must be finite and positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam moment decays must lie in [0, 1)");
        }
        if !self.adam_eps.is_finite() || self.adam_eps <= 0.0 {
            return bad("adam_eps must be finite and positive");
        }
        if self.context_len == Some(0) {
            return bad("context_len must be positive when set");
        }
        Ok(())
    }
}

/// History length used for each sample: the configured context, defaulting
/// to twice the lag, floored at the lag itself.
pub fn effective_context(cfg: &TrainConfig, lag: usize) -> usize {
    cfg.context_len.unwrap_or(2 * lag).max(lag)
}

/// Contiguous row ranges for one evaluation window. Training rows strictly
/// precede validation rows, which strictly precede the test rows; the test
/// range is exactly one forecast horizon long.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSplit {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl WindowSplit {
    pub fn validate(&self, horizon: usize) -> Result<(), TrainError> {
        let bad = |what: String| Err(TrainError::BadSplit { what });
        if self.train.is_empty() {
            return bad("training range is empty".into());
        }
        if self.val.is_empty() {
            return bad("validation range is empty".into());
        }
        if self.test.is_empty() {
            return bad("test range is empty".into());
        }
        if self.train.end > self.val.start {
            return bad(format!(
                "training rows [{}, {}) must precede validation rows [{}, {})",
                self.train.start, self.train.end, self.val.start, self.val.end
            ));
        }
        if self.val.end > self.test.start {
            return bad(format!(
                "validation rows [{}, {}) must precede test rows [{}, {})",
                self.val.start, self.val.end, self.test.start, self.test.end
            ));
        }
        if self.test.len() != horizon {
            return bad(format!(
                "test range length {} does not equal the forecast horizon {}",
                self.test.len(),
                horizon
            ));
        }
        Ok(())
    }
}

/// Rolling evaluation schemes: 12 windows of 30 days, 6 of 60, or 4 of 90.
/// The window length doubles as the forecast horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Short,
    Medium,
    Long,
}

impl Scheme {
    pub fn window_len(self) -> usize {
        match self {
            Scheme::Short => 30,
            Scheme::Medium => 60,
            Scheme::Long => 90,
        }
    }

    pub fn window_count(self) -> usize {
        match self {
            Scheme::Short => 12,
            Scheme::Medium => 6,
            Scheme::Long => 4,
        }
    }

    pub fn horizon(self) -> usize {
        self.window_len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Short => "short",
            Scheme::Medium => "medium",
            Scheme::Long => "long",
        }
    }

    pub fn all() -> [Scheme; 3] {
        [Scheme::Short, Scheme::Medium, Scheme::Long]
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "short" => Ok(Scheme::Short),
            "medium" => Ok(Scheme::Medium),
            "long" => Ok(Scheme::Long),
            other => Err(TrainError::UnknownScheme(other.to_string())),
        }
    }
}

/// Chronological rolling-origin splits over a panel of `total_rows` days.
/// Window `i` tests rows `[anchor + i*L, anchor + (i+1)*L)`, validates on
/// the `L` rows immediately before its test block, and trains on everything
/// earlier. Test blocks tile the axis without overlap; the first window that
/// does not fit is reported by index.
pub fn rolling_windows(
    total_rows: usize,
    scheme: Scheme,
    anchor: usize,
) -> Result<Vec<WindowSplit>, TrainError> {
    let len = scheme.window_len();
    let mut out = Vec::with_capacity(scheme.window_count());
    for index in 0..scheme.window_count() {
        let test_start = anchor + index * len;
        let test_end = test_start + len;
        if test_start < len + 1 {
            return Err(TrainError::InfeasibleWindow {
                index,
                detail: format!(
                    "test rows start at {test_start} but {} rows of validation plus a nonempty training prefix are needed first",
                    len
                ),
            });
        }
        if test_end > total_rows {
            return Err(TrainError::InfeasibleWindow {
                index,
                detail: format!(
                    "test rows [{test_start}, {test_end}) exceed the {total_rows} available rows"
                ),
            });
        }
        let val_start = test_start - len;
        out.push(WindowSplit {
            train: 0..val_start,
            val: val_start..test_start,
            test: test_start..test_end,
        });
    }
    Ok(out)
}

/// Forecast origins inside `range`: each origin `t` predicts rows
/// `[t, t + horizon)` from the `context` rows before it. With
/// `history_inside` the context must not leave the range (training samples);
/// otherwise it may reach back into earlier rows but not before row 0
/// (validation and test samples).
pub fn forecast_origins(
    split: &'static str,
    range: &Range<usize>,
    context: usize,
    horizon: usize,
    history_inside: bool,
) -> Result<Vec<usize>, TrainError> {
    let first = if history_inside { range.start + context } else { range.start.max(context) };
    let origins: Vec<usize> = (first..).take_while(|t| t + horizon <= range.end).collect();
    if origins.is_empty() {
        return Err(TrainError::InsufficientSamples {
            split,
            start: range.start,
            end: range.end,
            context,
            horizon,
        });
    }
    Ok(origins)
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_ms: u64,
}

/// One row of the beta selection table. `val_rmse` is empty for candidates
/// whose training failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub beta1: f64,
    pub beta2: f64,
    pub val_rmse: Option<f64>,
    pub status: String,
}

struct Adam {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    step_count: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    fn new(cfg: &TrainConfig, params: &[&Tensor]) -> Adam {
        Adam {
            lr: cfg.learning_rate,
            b1: cfg.adam_beta1,
            b2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            step_count: 0,
            m: params.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect(),
            v: params.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect(),
        }
    }

    fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        self.step_count += 1;
        let bc1 = 1.0 - self.b1.powi(self.step_count);
        let bc2 = 1.0 - self.b2.powi(self.step_count);
        for (index, param) in params.iter_mut().enumerate() {
            let g = grads[index].data();
            let m = self.m[index].data_mut();
            let v = self.v[index].data_mut();
            let p = param.data_mut();
            for i in 0..p.len() {
                m[i] = self.b1 * m[i] + (1.0 - self.b1) * g[i];
                v[i] = self.b2 * v[i] + (1.0 - self.b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Scales all gradients by `clip / norm` when the global L2 norm exceeds
/// `clip`; gradients at or below the threshold are untouched. Returns the
/// pre-clip norm so callers can reject non-finite gradients.
fn clip_global_norm(grads: &mut [Tensor], clip: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm.is_finite() && norm > clip {
        let scale = clip / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

pub(crate) fn history_block(panel: &Tensor, start: usize, len: usize) -> Tensor {
    let n = panel.cols();
    let mut out = Tensor::zeros(len, n);
    for r in 0..len {
        for c in 0..n {
            out.set(r, c, panel.get(start + r, c));
        }
    }
    out
}

pub(crate) fn target_block(panel: &Tensor, origin: usize, horizon: usize) -> Tensor {
    let n = panel.cols();
    let mut out = Tensor::zeros(n, horizon);
    for step in 0..horizon {
        for s in 0..n {
            out.set(s, step, panel.get(origin + step, s));
        }
    }
    out
}

fn batch_root<'t>(
    tape: &'t Tape,
    model: &EstgcnModel,
    panel: &Tensor,
    chunk: &[usize],
    context: usize,
    loss_cfg: &LossConfig,
    params: &[Var<'t>],
) -> Result<Var<'t>, TrainError> {
    let horizon = model.temporal.horizon;
    let mut losses = Vec::with_capacity(chunk.len());
    for &origin in chunk {
        let history = history_block(panel, origin - context, context);
        let target = target_block(panel, origin, horizon);
        let pred = model.forecast_on_tape(tape, &history, params)?;
        losses.push(panel_loss_on_tape(tape, pred, &target, loss_cfg)?);
    }
    if losses.len() == 1 {
        Ok(losses[0])
    } else {
        Ok(tape.mean(tape.concat_rows(&losses)?)?)
    }
}

fn train_batch(
    model: &mut EstgcnModel,
    panel: &Tensor,
    chunk: &[usize],
    context: usize,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    adam: &mut Adam,
) -> Result<f64, TrainError> {
    let tape = Tape::new();
    let params = model.param_leaves(&tape)?;
    let root = batch_root(&tape, model, panel, chunk, context, loss_cfg, &params)?;
    let value = root.value().scalar_value()?;
    tape.backward(root)?;
    let mut grads: Vec<Tensor> = params.iter().map(|v| v.grad()).collect();
    let norm = clip_global_norm(&mut grads, train_cfg.clip_norm);
    if !norm.is_finite() {
        return Err(TrainError::Diff(DiffError::NonFinite { op: "gradient" }));
    }
    let mut host = model.params_mut();
    adam.step(&mut host, &grads);
    Ok(value)
}

fn evaluate_loss(
    model: &EstgcnModel,
    panel: &Tensor,
    origins: &[usize],
    context: usize,
    batch: usize,
    loss_cfg: &LossConfig,
) -> Result<f64, TrainError> {
    let mut weighted = 0.0;
    let mut count = 0usize;
    for chunk in origins.chunks(batch) {
        let tape = Tape::new();
        let params = model.param_leaves(&tape)?;
        let root = batch_root(&tape, model, panel, chunk, context, loss_cfg, &params)?;
        weighted += root.value().scalar_value()? * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(weighted / count as f64)
}

/// Divergence surfaces as a non-finite value check somewhere in the graph;
/// the parameters are shared across stations, so no single station can be
/// blamed and the station field stays empty. Data NaNs are caught before
/// training starts and name the exact station and row instead.
fn promote_non_finite(err: TrainError, epoch: usize, batch: usize) -> TrainError {
    match err {
        TrainError::Diff(DiffError::NonFinite { .. })
        | TrainError::Model(ModelError::Engine(DiffError::NonFinite { .. })) => {
            TrainError::NanLoss { epoch, batch, station: None }
        }
        other => other,
    }
}

/// Trains `model` in place on the panel rows of `split.train`, reporting
/// per-epoch training and validation loss. The panel is timestamps by
/// stations in data units. Epoch and batch indices in errors and stats are
/// 1-based; a divergence detected during the validation pass carries the
/// index of the last trained batch.
pub fn train(
    model: &mut EstgcnModel,
    panel: &Tensor,
    split: &WindowSplit,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<EpochStats>, TrainError> {
    model.validate()?;
    train_cfg.validate()?;
    loss_cfg.validate()?;
    let n = model.n_stations();
    if loss_cfg.thresholds.len() != n {
        return Err(TrainError::LengthMismatch {
            what: "thresholds",
            expected: n,
            got: loss_cfg.thresholds.len(),
        });
    }
    if panel.cols() != n {
        return Err(TrainError::LengthMismatch { what: "panel columns", expected: n, got: panel.cols() });
    }
    let lag = model.temporal.lag;
    let horizon = model.temporal.horizon;
    split.validate(horizon)?;
    if split.test.end > panel.rows() {
        return Err(TrainError::BadSplit {
            what: format!("split needs {} rows but the panel has {}", split.test.end, panel.rows()),
        });
    }
    for row in 0..split.val.end {
        for station in 0..n {
            if !panel.get(row, station).is_finite() {
                return Err(TrainError::Model(ModelError::NanInHistory { station, row }));
            }
        }
    }
    let context = effective_context(train_cfg, lag);
    let mut order = forecast_origins("training", &split.train, context, horizon, true)?;
    let val_origins = forecast_origins("validation", &split.val, context, horizon, false)?;

    let mut adam = Adam::new(train_cfg, &model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut stats = Vec::with_capacity(train_cfg.epochs);
    for epoch in 1..=train_cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        let mut samples = 0usize;
        let mut batches = 0usize;
        for (index, chunk) in order.chunks(train_cfg.batch).enumerate() {
            let batch = index + 1;
            let value = train_batch(model, panel, chunk, context, loss_cfg, train_cfg, &mut adam)
                .map_err(|e| promote_non_finite(e, epoch, batch))?;
            weighted += value * chunk.len() as f64;
            samples += chunk.len();
            batches = batch;
        }
        let train_loss = weighted / samples as f64;
        let val_loss = evaluate_loss(model, panel, &val_origins, context, train_cfg.batch, loss_cfg)
            .map_err(|e| promote_non_finite(e, epoch, batches))?;
        stats.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok(stats)
}

/// Point-forecast RMSE over the given origins, in data units, pooled across
/// stations and horizon steps.
pub fn forecast_rmse(
    model: &EstgcnModel,
    panel: &Tensor,
    origins: &[usize],
    context: usize,
) -> Result<f64, TrainError> {
    if origins.is_empty() {
        return Err(TrainError::BadSplit { what: "no forecast origins".into() });
    }
    let horizon = model.temporal.horizon;
    let n = model.n_stations();
    let mut ss = 0.0;
    let mut count = 0usize;
    for &origin in origins {
        let history = history_block(panel, origin - context, context);
        let pred = model.forecast(&history)?;
        for step in 0..horizon {
            for s in 0..n {
                let d = pred.get(step, s) - panel.get(origin + step, s);
                ss += d * d;
                count += 1;
            }
        }
    }
    Ok((ss / count as f64).sqrt())
}

/// The candidate grid searched when none is configured.
pub fn default_beta_grid() -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &beta1 in &[0.5, 1.0] {
        for &beta2 in &[0.0, 0.1, 0.5, 1.0] {
            out.push((beta1, beta2));
        }
    }
    out
}

/// Trains one fresh model per `(beta1, beta2)` candidate and picks the pair
/// with the lowest validation RMSE, breaking ties toward the larger `beta2`
/// and then the larger `beta1`. Candidates whose training fails are recorded
/// in the table with the error text and excluded from selection.
pub fn select_betas<F>(
    grid: &[(f64, f64)],
    factory: F,
    panel: &Tensor,
    split: &WindowSplit,
    template: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<((f64, f64), Vec<BetaRow>), TrainError>
where
    F: Fn() -> EstgcnModel,
{
    if grid.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let mut rows = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, f64)> = None;
    for &(beta1, beta2) in grid {
        let cfg = LossConfig { beta1, beta2, ..template.clone() };
        let outcome = (|| -> Result<f64, TrainError> {
            let mut model = factory();
            train(&mut model, panel, split, &cfg, train_cfg)?;
            let context = effective_context(train_cfg, model.temporal.lag);
            let origins =
                forecast_origins("validation", &split.val, context, model.temporal.horizon, false)?;
            forecast_rmse(&model, panel, &origins, context)
        })();
        match outcome {
            Ok(rmse) => {
                rows.push(BetaRow { beta1, beta2, val_rmse: Some(rmse), status: "ok".into() });
                let better = match &best {
                    None => true,
                    Some((best_rmse, best_b2, best_b1)) => match rmse.total_cmp(best_rmse) {
                        Ordering::Less => true,
                        Ordering::Greater => false,
                        Ordering::Equal => match beta2.total_cmp(best_b2) {
                            Ordering::Greater => true,
                            Ordering::Less => false,
                            Ordering::Equal => beta1.total_cmp(best_b1) == Ordering::Greater,
                        },
                    },
                };
                if better {
                    best = Some((rmse, beta2, beta1));
                }
            }
            Err(err) => {
                rows.push(BetaRow { beta1, beta2, val_rmse: None, status: format!("failed: {err}") });
            }
        }
    }
    match best {
        Some((_, beta2, beta1)) => Ok(((beta1, beta2), rows)),
        None => Err(TrainError::AllBetaCandidatesFailed),
    }
}

/// Writes the per-epoch log as `epoch,train_loss,val_loss,wall_ms`.
pub fn write_training_log(path: &Path, rows: &[EpochStats]) -> Result<(), TrainError> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes the selection table as `beta1,beta2,val_rmse,status` with an empty
/// RMSE field for failed candidates.
pub fn write_beta_table(path: &Path, rows: &[BetaRow]) -> Result<(), TrainError> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
