//! The E-STGCN network: a K-layer graph-convolutional spatial block that
//! embeds each station's reading into a scalar per timestamp, and an LSTM
//! temporal block over lagged embeddings with a direct multi-output head
//! producing q-step-ahead forecasts for every station.
//!
//! All forward passes are built on a [`Tape`] so training can differentiate
//! end to end; the plain entry points wrap a throwaway tape. Inputs are
//! z-scored per station with statistics from the training split and outputs
//! are mapped back to data units before they leave this module.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff_engine::{DiffError, Tape, Tensor, Var};
use crate::geo_graph::LaplacianBundle;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what} must be at least 1")]
    BadHyper { what: &'static str },
    #[error("{what}: expected {expected} stations, got {got}")]
    StationMismatch { what: &'static str, expected: usize, got: usize },
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    BadShape { what: &'static str, expected: (usize, usize), got: (usize, usize) },
    #[error("{what}: expected {expected} tensors, got {got}")]
    WeightListLength { what: &'static str, expected: usize, got: usize },
    #[error("non-finite values in {what}")]
    NonFiniteParam { what: &'static str },
    #[error("normalization stats for station index {station} need a finite positive std")]
    BadNormStats { station: usize },
    #[error("station index {station} has zero variance over the fit range")]
    ZeroVariance { station: usize },
    #[error("history has {rows} rows but the temporal block needs at least {lag}")]
    InsufficientHistory { rows: usize, lag: usize },
    #[error("non-finite value in history at station index {station}, row {row}")]
    NanInHistory { station: usize, row: usize },
    #[error("checkpoint parse: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Engine(#[from] DiffError),
}

/// Gate and spatial nonlinearity choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply<'t>(self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>, DiffError> {
        match self {
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Architecture hyperparameters. `lag` is the LSTM input window p, `hidden`
/// the cell width m, `horizon` the number of steps q forecast jointly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub k_layers: usize,
    pub lag: usize,
    pub hidden: usize,
    pub horizon: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { k_layers: 2, lag: 7, hidden: 32, horizon: 1, activation: Activation::Tanh }
    }
}

/// Per-station z-score statistics fixed on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl NormStats {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self, ModelError> {
        let stats = NormStats { mean, std };
        stats.validate()?;
        Ok(stats)
    }

    /// Population mean and standard deviation per station column.
    pub fn fit(columns: &[Vec<f64>]) -> Result<Self, ModelError> {
        let mut mean = Vec::with_capacity(columns.len());
        let mut std = Vec::with_capacity(columns.len());
        for (station, col) in columns.iter().enumerate() {
            if col.is_empty() {
                return Err(ModelError::ZeroVariance { station });
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(ModelError::NanInHistory { station, row });
            }
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64;
            if var <= 0.0 {
                return Err(ModelError::ZeroVariance { station });
            }
            mean.push(m);
            std.push(var.sqrt());
        }
        Ok(NormStats { mean, std })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.mean.len() != self.std.len() {
            return Err(ModelError::StationMismatch {
                what: "norm stats",
                expected: self.mean.len(),
                got: self.std.len(),
            });
        }
        for (station, (m, s)) in self.mean.iter().zip(&self.std).enumerate() {
            if !m.is_finite() || !s.is_finite() || *s <= 0.0 {
                return Err(ModelError::BadNormStats { station });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self, station: usize) -> f64 {
        self.mean[station]
    }

    pub fn std(&self, station: usize) -> f64 {
        self.std[station]
    }

    pub fn normalize(&self, station: usize, value: f64) -> f64 {
        (value - self.mean[station]) / self.std[station]
    }

    pub fn denormalize(&self, station: usize, value: f64) -> f64 {
        value * self.std[station] + self.mean[station]
    }
}

/// K rounds of neighbor-mean message passing with a scalar embedding per
/// station, plus the first-order filter weights and the dense projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialBlock {
    pub k_layers: usize,
    pub neighbor_weights: Vec<Tensor>,
    pub self_weights: Vec<Tensor>,
    pub activation: Activation,
    pub cheb_w0: f64,
    pub cheb_w1: f64,
    pub dense_weight: Tensor,
    pub dense_bias: Tensor,
}

impl SpatialBlock {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k_layers == 0 {
            return Err(ModelError::BadHyper { what: "k_layers" });
        }
        for (what, list) in [
            ("neighbor_weights", &self.neighbor_weights),
            ("self_weights", &self.self_weights),
        ] {
            if list.len() != self.k_layers {
                return Err(ModelError::WeightListLength { what, expected: self.k_layers, got: list.len() });
            }
            for t in list.iter() {
                expect_shape(what, t, (1, 1))?;
            }
        }
        expect_shape("dense_weight", &self.dense_weight, (1, 1))?;
        expect_shape("dense_bias", &self.dense_bias, (1, 1))?;
        if !self.cheb_w0.is_finite() || !self.cheb_w1.is_finite() {
            return Err(ModelError::NonFiniteParam { what: "chebyshev weights" });
        }
        Ok(())
    }
}

/// LSTM over lagged embeddings. Gate inputs mix the p-long embedding window
/// (U_Z*, m x p) with the previous hidden state (U_H*, m x m); the head maps
/// the final hidden state to all q horizon steps at once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalBlock {
    pub lag: usize,
    pub hidden: usize,
    pub horizon: usize,
    pub u_zf: Tensor,
    pub u_hf: Tensor,
    pub b_f: Tensor,
    pub u_zi: Tensor,
    pub u_hi: Tensor,
    pub b_i: Tensor,
    pub u_zm: Tensor,
    pub u_hm: Tensor,
    pub b_m: Tensor,
    pub u_zo: Tensor,
    pub u_ho: Tensor,
    pub b_o: Tensor,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

impl TemporalBlock {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (what, value) in [("lag", self.lag), ("hidden", self.hidden), ("horizon", self.horizon)] {
            if value == 0 {
                return Err(ModelError::BadHyper { what });
            }
        }
        let (p, m, q) = (self.lag, self.hidden, self.horizon);
        for (what, t, shape) in [
            ("u_zf", &self.u_zf, (m, p)),
            ("u_hf", &self.u_hf, (m, m)),
            ("b_f", &self.b_f, (1, m)),
            ("u_zi", &self.u_zi, (m, p)),
            ("u_hi", &self.u_hi, (m, m)),
            ("b_i", &self.b_i, (1, m)),
            ("u_zm", &self.u_zm, (m, p)),
            ("u_hm", &self.u_hm, (m, m)),
            ("b_m", &self.b_m, (1, m)),
            ("u_zo", &self.u_zo, (m, p)),
            ("u_ho", &self.u_ho, (m, m)),
            ("b_o", &self.b_o, (1, m)),
            ("head_weight", &self.head_weight, (q, m)),
            ("head_bias", &self.head_bias, (1, q)),
        ] {
            expect_shape(what, t, shape)?;
        }
        Ok(())
    }
}

fn expect_shape(what: &'static str, t: &Tensor, expected: (usize, usize)) -> Result<(), ModelError> {
    if t.shape() != expected {
        return Err(ModelError::BadShape { what, expected, got: t.shape() });
    }
    if !t.all_finite() {
        return Err(ModelError::NonFiniteParam { what });
    }
    Ok(())
}

/// Serialized model state: everything except the graph, which is supplied at
/// load time and checked for station-count agreement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spatial: SpatialBlock,
    pub temporal: TemporalBlock,
    pub norm_stats: NormStats,
}

/// The full network plus the station graph and normalization statistics it
/// was trained against. Immutable during forecast and safe to share across
/// threads for concurrent inference; training mutates parameters and needs
/// exclusive access.
#[derive(Debug, Clone)]
pub struct EstgcnModel {
    pub spatial: SpatialBlock,
    pub temporal: TemporalBlock,
    pub graph: LaplacianBundle,
    pub norm_stats: NormStats,
}

impl EstgcnModel {
    /// Seeded initialization: weight tensors uniform in
    /// +/- sqrt(6 / (fan_in + fan_out)), biases zero, identity filter
    /// weights (w0 = 1, w1 = 0).
    pub fn init(
        config: &ModelConfig,
        graph: LaplacianBundle,
        norm_stats: NormStats,
        seed: u64,
    ) -> Result<Self, ModelError> {
        for (what, value) in [
            ("k_layers", config.k_layers),
            ("lag", config.lag),
            ("hidden", config.hidden),
            ("horizon", config.horizon),
        ] {
            if value == 0 {
                return Err(ModelError::BadHyper { what });
            }
        }
        norm_stats.validate()?;
        if norm_stats.len() != graph.n() {
            return Err(ModelError::StationMismatch {
                what: "norm stats",
                expected: graph.n(),
                got: norm_stats.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, m, q) = (config.lag, config.hidden, config.horizon);
        let spatial = SpatialBlock {
            k_layers: config.k_layers,
            neighbor_weights: (0..config.k_layers).map(|_| xavier(&mut rng, 1, 1)).collect(),
            self_weights: (0..config.k_layers).map(|_| xavier(&mut rng, 1, 1)).collect(),
            activation: config.activation,
            cheb_w0: 1.0,
            cheb_w1: 0.0,
            dense_weight: xavier(&mut rng, 1, 1),
            dense_bias: Tensor::zeros(1, 1),
        };
        let temporal = TemporalBlock {
            lag: p,
            hidden: m,
            horizon: q,
            u_zf: xavier(&mut rng, m, p),
            u_hf: xavier(&mut rng, m, m),
            b_f: Tensor::zeros(1, m),
            u_zi: xavier(&mut rng, m, p),
            u_hi: xavier(&mut rng, m, m),
            b_i: Tensor::zeros(1, m),
            u_zm: xavier(&mut rng, m, p),
            u_hm: xavier(&mut rng, m, m),
            b_m: Tensor::zeros(1, m),
            u_zo: xavier(&mut rng, m, p),
            u_ho: xavier(&mut rng, m, m),
            b_o: Tensor::zeros(1, m),
            head_weight: xavier(&mut rng, q, m),
            head_bias: Tensor::zeros(1, q),
        };
        Ok(EstgcnModel { spatial, temporal, graph, norm_stats })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.spatial.validate()?;
        self.temporal.validate()?;
        self.norm_stats.validate()?;
        if self.norm_stats.len() != self.graph.n() {
            return Err(ModelError::StationMismatch {
                what: "norm stats",
                expected: self.graph.n(),
                got: self.norm_stats.len(),
            });
        }
        Ok(())
    }

    pub fn n_stations(&self) -> usize {
        self.graph.n()
    }

    /// Trainable tensors in a fixed order shared with `params_mut` and
    /// `param_leaves`; optimizer state is aligned by position.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        out.extend(self.spatial.neighbor_weights.iter());
        out.extend(self.spatial.self_weights.iter());
        out.push(&self.spatial.dense_weight);
        out.push(&self.spatial.dense_bias);
        let t = &self.temporal;
        out.extend([
            &t.u_zf, &t.u_hf, &t.b_f, &t.u_zi, &t.u_hi, &t.b_i, &t.u_zm, &t.u_hm, &t.b_m, &t.u_zo,
            &t.u_ho, &t.b_o, &t.head_weight, &t.head_bias,
        ]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.spatial.neighbor_weights.iter_mut());
        out.extend(self.spatial.self_weights.iter_mut());
        out.push(&mut self.spatial.dense_weight);
        out.push(&mut self.spatial.dense_bias);
        let t = &mut self.temporal;
        out.extend([
            &mut t.u_zf,
            &mut t.u_hf,
            &mut t.b_f,
            &mut t.u_zi,
            &mut t.u_hi,
            &mut t.b_i,
            &mut t.u_zm,
            &mut t.u_hm,
            &mut t.b_m,
            &mut t.u_zo,
            &mut t.u_ho,
            &mut t.b_o,
            &mut t.head_weight,
            &mut t.head_bias,
        ]);
        out
    }

    /// Enters every trainable tensor as a leaf on `tape`, in `params` order.
    pub fn param_leaves<'t>(&self, tape: &'t Tape) -> Result<Vec<Var<'t>>, ModelError> {
        self.params().into_iter().map(|t| tape.leaf(t.clone()).map_err(ModelError::from)).collect()
    }

    /// Builds the forecast graph from data-unit history rows (timestamps by
    /// stations, at least `lag` rows) using the supplied parameter leaves.
    /// Returns the de-normalized prediction node, stations by horizon steps.
    ///
    /// The LSTM is unrolled once per timestamp from row `lag - 1` to the
    /// last row, each step reading the p-long embedding window that ends
    /// there, so longer histories warm up the recurrent state and `lag` rows
    /// degenerate to a single step.
    pub fn forecast_on_tape<'t>(
        &self,
        tape: &'t Tape,
        history: &Tensor,
        params: &[Var<'t>],
    ) -> Result<Var<'t>, ModelError> {
        let n = self.graph.n();
        let (rows, cols) = history.shape();
        if cols != n {
            return Err(ModelError::StationMismatch { what: "history", expected: n, got: cols });
        }
        let p = self.temporal.lag;
        if rows < p {
            return Err(ModelError::InsufficientHistory { rows, lag: p });
        }
        for r in 0..rows {
            for s in 0..n {
                if !history.get(r, s).is_finite() {
                    return Err(ModelError::NanInHistory { station: s, row: r });
                }
            }
        }
        let idx = ParamIdx { k: self.spatial.k_layers };

        // Normalized history transposed to stations-by-timestamps so a
        // timestamp is a column slice.
        let mut hist_t = Tensor::zeros(n, rows);
        for r in 0..rows {
            for s in 0..n {
                hist_t.set(s, r, self.norm_stats.normalize(s, history.get(r, s)));
            }
        }
        let hist = tape.leaf(hist_t)?;
        let agg = tape.leaf(neighbor_mean_matrix(&self.graph))?;

        let mut embeddings = Vec::with_capacity(rows);
        for r in 0..rows {
            let x = tape.slice_cols(hist, r, 1)?;
            let z = spatial_on_tape(tape, x, agg, params, &idx, &self.spatial)?;
            embeddings.push(z);
        }
        let z_all = tape.concat_cols(&embeddings)?;

        let m = self.temporal.hidden;
        let mut h = tape.leaf(Tensor::zeros(n, m))?;
        let mut c = tape.leaf(Tensor::zeros(n, m))?;
        for step in p..=rows {
            let window = tape.slice_cols(z_all, step - p, p)?;
            (h, c) = lstm_cell_on_tape(tape, window, h, c, params, &idx)?;
        }

        let head = tape.matmul_nt(h, params[idx.head_weight()])?;
        let pred_norm = tape.add_row_broadcast(head, params[idx.head_bias()])?;

        // De-normalization stays on the tape: loss gating compares against
        // thresholds in data units.
        let q = self.temporal.horizon;
        let mut std_rep = Tensor::zeros(n, q);
        let mut mean_rep = Tensor::zeros(n, q);
        for s in 0..n {
            for j in 0..q {
                std_rep.set(s, j, self.norm_stats.std(s));
                mean_rep.set(s, j, self.norm_stats.mean(s));
            }
        }
        let scaled = tape.mul(pred_norm, tape.leaf(std_rep)?)?;
        Ok(tape.add(scaled, tape.leaf(mean_rep)?)?)
    }

    /// Forecasts the next q steps from the trailing history rows, returning
    /// a horizon-by-stations matrix in data units.
    pub fn forecast(&self, history: &Tensor) -> Result<Tensor, ModelError> {
        self.validate()?;
        let tape = Tape::new();
        let params = self.param_leaves(&tape)?;
        let pred = self.forecast_on_tape(&tape, history, &params)?;
        let value = pred.value();
        let (n, q) = value.shape();
        let mut out = Tensor::zeros(q, n);
        for s in 0..n {
            for j in 0..q {
                out.set(j, s, value.get(s, j));
            }
        }
        Ok(out)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            spatial: self.spatial.clone(),
            temporal: self.temporal.clone(),
            norm_stats: self.norm_stats.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint, graph: LaplacianBundle) -> Result<Self, ModelError> {
        let model = EstgcnModel {
            spatial: ckpt.spatial,
            temporal: ckpt.temporal,
            graph,
            norm_stats: ckpt.norm_stats,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_checkpoint_json(&self) -> String {
        serde_json::to_string_pretty(&self.checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(json: &str, graph: LaplacianBundle) -> Result<Self, ModelError> {
        let ckpt: Checkpoint =
            serde_json::from_str(json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        EstgcnModel::from_checkpoint(ckpt, graph)
    }
}

/// Positions of each parameter inside the `params()` ordering.
struct ParamIdx {
    k: usize,
}

impl ParamIdx {
    fn neighbor(&self, layer: usize) -> usize {
        layer
    }
    fn self_w(&self, layer: usize) -> usize {
        self.k + layer
    }
    fn dense_w(&self) -> usize {
        2 * self.k
    }
    fn dense_b(&self) -> usize {
        2 * self.k + 1
    }
    fn temporal(&self, offset: usize) -> usize {
        2 * self.k + 2 + offset
    }
    fn head_weight(&self) -> usize {
        self.temporal(12)
    }
    fn head_bias(&self) -> usize {
        self.temporal(13)
    }
}

/// Row-normalized neighbor indicator: entry (i, j) is 1/|N(i)| for each
/// neighbor j, so multiplying a station-column vector yields per-station
/// neighbor means. An isolated station's row is zero, making its aggregate
/// the zero vector.
fn neighbor_mean_matrix(bundle: &LaplacianBundle) -> Tensor {
    let n = bundle.n();
    let mut m = Tensor::zeros(n, n);
    for i in 0..n {
        let neighbors = bundle.neighbors(i);
        if neighbors.is_empty() {
            continue;
        }
        let w = 1.0 / neighbors.len() as f64;
        for j in neighbors {
            m.set(i, j, w);
        }
    }
    m
}

/// K message-passing layers and the dense projection on a stations-column
/// input, returning the per-station embedding column.
fn spatial_on_tape<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    agg_matrix: Var<'t>,
    params: &[Var<'t>],
    idx: &ParamIdx,
    block: &SpatialBlock,
) -> Result<Var<'t>, ModelError> {
    let mut h = x;
    for layer in 0..block.k_layers {
        let agg = tape.matmul(agg_matrix, h)?;
        let neighbor_term = tape.matmul(agg, params[idx.neighbor(layer)])?;
        let self_term = tape.matmul(h, params[idx.self_w(layer)])?;
        h = block.activation.apply(tape, tape.add(neighbor_term, self_term)?)?;
    }
    let dense = tape.matmul(h, params[idx.dense_w()])?;
    Ok(tape.add_row_broadcast(dense, params[idx.dense_b()])?)
}

/// One LSTM update on a stations-by-lag window. Gates use sigmoid, the
/// candidate and output squashing use tanh, and the state update is
/// c = F.c_prev + I.M, h = O.tanh(c) elementwise.
fn lstm_cell_on_tape<'t>(
    tape: &'t Tape,
    window: Var<'t>,
    h_prev: Var<'t>,
    c_prev: Var<'t>,
    params: &[Var<'t>],
    idx: &ParamIdx,
) -> Result<(Var<'t>, Var<'t>), ModelError> {
    let gate = |offset: usize| -> Result<Var<'t>, DiffError> {
        let zin = tape.matmul_nt(window, params[idx.temporal(offset)])?;
        let hin = tape.matmul_nt(h_prev, params[idx.temporal(offset + 1)])?;
        tape.add_row_broadcast(tape.add(zin, hin)?, params[idx.temporal(offset + 2)])
    };
    let f = tape.sigmoid(gate(0)?)?;
    let i = tape.sigmoid(gate(3)?)?;
    let m = tape.tanh(gate(6)?)?;
    let o = tape.sigmoid(gate(9)?)?;
    let c = tape.add(tape.mul(f, c_prev)?, tape.mul(i, m)?)?;
    let h = tape.mul(o, tape.tanh(c)?)?;
    Ok((h, c))
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect())
        .expect("generated data matches shape")
}

/// Embeds one timestamp of station readings: K neighbor-mean message-passing
/// rounds followed by the dense projection. Station order follows the graph.
pub fn spatial_forward(
    x: &[f64],
    bundle: &LaplacianBundle,
    block: &SpatialBlock,
) -> Result<Vec<f64>, ModelError> {
    block.validate()?;
    if x.len() != bundle.n() {
        return Err(ModelError::StationMismatch {
            what: "spatial input",
            expected: bundle.n(),
            got: x.len(),
        });
    }
    let tape = Tape::new();
    let x_col = tape.leaf(Tensor::column(x))?;
    let agg = tape.leaf(neighbor_mean_matrix(bundle))?;
    let params = spatial_param_leaves(&tape, block)?;
    let idx = ParamIdx { k: block.k_layers };
    let z = spatial_on_tape(&tape, x_col, agg, &params, &idx, block)?;
    Ok(z.value().data().to_vec())
}

fn spatial_param_leaves<'t>(tape: &'t Tape, block: &SpatialBlock) -> Result<Vec<Var<'t>>, ModelError> {
    let mut params = Vec::new();
    for t in block.neighbor_weights.iter().chain(&block.self_weights) {
        params.push(tape.leaf(t.clone())?);
    }
    params.push(tape.leaf(block.dense_weight.clone())?);
    params.push(tape.leaf(block.dense_bias.clone())?);
    Ok(params)
}

/// First-order spectral filter `w0 x + w1 L~ x` over the rescaled Laplacian.
pub fn chebyshev_first_order(
    x: &[f64],
    bundle: &LaplacianBundle,
    w0: f64,
    w1: f64,
) -> Result<Vec<f64>, ModelError> {
    let n = bundle.n();
    if x.len() != n {
        return Err(ModelError::StationMismatch { what: "filter input", expected: n, got: x.len() });
    }
    Ok((0..n)
        .map(|i| {
            let filtered: f64 =
                bundle.scaled_row(i).iter().zip(x).map(|(l, v)| l * v).sum();
            w0 * x[i] + w1 * filtered
        })
        .collect())
}

/// One LSTM cell update for a single station. `z_lags` is the embedding
/// window in chronological order (oldest first).
pub fn lstm_step(
    z_lags: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    block: &TemporalBlock,
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    block.validate()?;
    if z_lags.len() != block.lag {
        return Err(ModelError::BadShape {
            what: "z_lags",
            expected: (1, block.lag),
            got: (1, z_lags.len()),
        });
    }
    for (what, v) in [("h_prev", h_prev), ("c_prev", c_prev)] {
        if v.len() != block.hidden {
            return Err(ModelError::BadShape {
                what,
                expected: (1, block.hidden),
                got: (1, v.len()),
            });
        }
    }
    let tape = Tape::new();
    let window = tape.leaf(Tensor::row(z_lags))?;
    let h = tape.leaf(Tensor::row(h_prev))?;
    let c = tape.leaf(Tensor::row(c_prev))?;
    let mut params = Vec::new();
    // Two placeholder slots stand in for the spatial dense entries so the
    // shared index arithmetic (built for the full model) lines up with k = 0.
    params.push(tape.leaf(Tensor::zeros(1, 1))?);
    params.push(tape.leaf(Tensor::zeros(1, 1))?);
    let t = block;
    for tensor in [
        &t.u_zf, &t.u_hf, &t.b_f, &t.u_zi, &t.u_hi, &t.b_i, &t.u_zm, &t.u_hm, &t.b_m, &t.u_zo,
        &t.u_ho, &t.b_o, &t.head_weight, &t.head_bias,
    ] {
        params.push(tape.leaf(tensor.clone())?);
    }
    let idx = ParamIdx { k: 0 };
    let (h_new, c_new) = lstm_cell_on_tape(&tape, window, h, c, &params, &idx)?;
    Ok((h_new.value().data().to_vec(), c_new.value().data().to_vec()))
}
