//! Recurrent forecasters: a stack of RNN or LSTM cells followed by a shared dense head.
//!
//! A forecast is one unrolled pass over `lookback + horizon` steps. The encoder
//! steps consume observed `(rain, tide, gwl)` rows; the decoder steps continue the
//! same recurrence on `(forecast rain, forecast tide, 0)`, and the head maps the top
//! hidden state of every decoder step to one groundwater prediction. Groundwater is
//! never an input over the forecast horizon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, uniform_init, Matrix, Prng, Vector};
use crate::training::mse_loss;

/// Columns of the observed block: rainfall, tide, groundwater level.
pub const PAST_CHANNELS: usize = 3;
/// Columns of the forecast block: rainfall, tide.
pub const FUTURE_CHANNELS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rnn,
    Lstm,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Rnn => "rnn",
            ModelKind::Lstm => "lstm",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Ok(ModelKind::Rnn),
            "lstm" => Ok(ModelKind::Lstm),
            other => Err(Error::Invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Architecture of a forecaster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSizes {
    pub kind: ModelKind,
    pub hidden_size: usize,
    pub layers: usize,
}

impl ModelSizes {
    /// One recurrent layer of 20 units.
    pub fn shallow_rnn() -> Self {
        ModelSizes {
            kind: ModelKind::Rnn,
            hidden_size: 20,
            layers: 1,
        }
    }

    /// Two stacked LSTM layers of 20 units.
    pub fn deep_lstm() -> Self {
        ModelSizes {
            kind: ModelKind::Lstm,
            hidden_size: 20,
            layers: 2,
        }
    }

    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Rnn => Self::shallow_rnn(),
            ModelKind::Lstm => Self::deep_lstm(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::Invalid("hidden_size must be positive".into()));
        }
        match self.kind {
            ModelKind::Rnn if self.layers != 1 => Err(Error::Invalid(format!(
                "an RNN forecaster has exactly 1 layer, got {}",
                self.layers
            ))),
            ModelKind::Lstm if self.layers < 2 => Err(Error::Invalid(format!(
                "an LSTM forecaster has at least 2 layers, got {}",
                self.layers
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RnnCellParams {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub b: Vector,
}

/// Weights of one LSTM gate (or of the candidate transform).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateParams {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub b: Vector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmCellParams {
    pub input: GateParams,
    pub forget: GateParams,
    pub output: GateParams,
    pub candidate: GateParams,
}

impl GateParams {
    fn zeros(hidden: usize, input: usize) -> Self {
        GateParams {
            w_x: Matrix::zeros(hidden, input),
            w_h: Matrix::zeros(hidden, hidden),
            b: Vector::zeros(hidden),
        }
    }

    fn random(prng: &mut Prng, hidden: usize, input: usize, bias: f64) -> Self {
        let scale = 1.0 / ((input + hidden) as f64).sqrt();
        GateParams {
            w_x: uniform_init(prng, hidden, input, scale),
            w_h: uniform_init(prng, hidden, hidden, scale),
            b: Vector(vec![bias; hidden]),
        }
    }

    fn pre_activation(&self, x: &[f64], h_prev: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.b.as_slice());
        self.w_x.mul_vec_into(x, out);
        self.w_h.mul_vec_into(h_prev, out);
    }

    fn check(&self, hidden: usize, input: usize, what: &str) -> Result<()> {
        check_shape(&self.w_x, (hidden, input), what)?;
        check_shape(&self.w_h, (hidden, hidden), what)?;
        if self.b.len() != hidden {
            return Err(Error::Shape(format!(
                "{what}: bias has length {}, expected {hidden}",
                self.b.len()
            )));
        }
        Ok(())
    }
}

impl RnnCellParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        RnnCellParams {
            w_x: Matrix::zeros(hidden, input),
            w_h: Matrix::zeros(hidden, hidden),
            b: Vector::zeros(hidden),
        }
    }

    pub fn random(prng: &mut Prng, hidden: usize, input: usize) -> Self {
        let scale = 1.0 / ((input + hidden) as f64).sqrt();
        RnnCellParams {
            w_x: uniform_init(prng, hidden, input, scale),
            w_h: uniform_init(prng, hidden, hidden, scale),
            b: Vector::zeros(hidden),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_x.rows()
    }

    pub fn input_size(&self) -> usize {
        self.w_x.cols()
    }

    fn step(&self, x: &[f64], h_prev: &[f64], h: &mut [f64]) {
        h.copy_from_slice(self.b.as_slice());
        self.w_x.mul_vec_into(x, h);
        self.w_h.mul_vec_into(h_prev, h);
        for v in h.iter_mut() {
            *v = v.tanh();
        }
    }
}

impl LstmCellParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        LstmCellParams {
            input: GateParams::zeros(hidden, input),
            forget: GateParams::zeros(hidden, input),
            output: GateParams::zeros(hidden, input),
            candidate: GateParams::zeros(hidden, input),
        }
    }

    /// Uniform weights, zero biases except the forget gate, which starts at 1.
    pub fn random(prng: &mut Prng, hidden: usize, input: usize) -> Self {
        LstmCellParams {
            input: GateParams::random(prng, hidden, input, 0.0),
            forget: GateParams::random(prng, hidden, input, 1.0),
            output: GateParams::random(prng, hidden, input, 0.0),
            candidate: GateParams::random(prng, hidden, input, 0.0),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.input.w_x.rows()
    }

    pub fn input_size(&self) -> usize {
        self.input.w_x.cols()
    }

    fn gates(&self) -> [&GateParams; 4] {
        [&self.input, &self.forget, &self.output, &self.candidate]
    }

    fn gates_mut(&mut self) -> [&mut GateParams; 4] {
        [&mut self.input, &mut self.forget, &mut self.output, &mut self.candidate]
    }

    fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64], act: &mut LstmActivations) {
        self.input.pre_activation(x, h_prev, &mut act.i);
        self.forget.pre_activation(x, h_prev, &mut act.f);
        self.output.pre_activation(x, h_prev, &mut act.o);
        self.candidate.pre_activation(x, h_prev, &mut act.g);
        for k in 0..act.h.len() {
            act.i[k] = sigmoid(act.i[k]);
            act.f[k] = sigmoid(act.f[k]);
            act.o[k] = sigmoid(act.o[k]);
            act.g[k] = act.g[k].tanh();
            act.c[k] = act.f[k] * c_prev[k] + act.i[k] * act.g[k];
            act.tanh_c[k] = act.c[k].tanh();
            act.h[k] = act.o[k] * act.tanh_c[k];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cell", rename_all = "lowercase")]
pub enum CellParams {
    Rnn(RnnCellParams),
    Lstm(LstmCellParams),
}

impl CellParams {
    pub fn hidden_size(&self) -> usize {
        match self {
            CellParams::Rnn(p) => p.hidden_size(),
            CellParams::Lstm(p) => p.hidden_size(),
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            CellParams::Rnn(p) => p.input_size(),
            CellParams::Lstm(p) => p.input_size(),
        }
    }

    fn tensors<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        match self {
            CellParams::Rnn(p) => {
                out.extend([p.w_x.data(), p.w_h.data(), p.b.as_slice()]);
            }
            CellParams::Lstm(p) => {
                for g in p.gates() {
                    out.extend([g.w_x.data(), g.w_h.data(), g.b.as_slice()]);
                }
            }
        }
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        match self {
            CellParams::Rnn(p) => {
                out.push(p.w_x.data_mut());
                out.push(p.w_h.data_mut());
                out.push(p.b.as_mut_slice());
            }
            CellParams::Lstm(p) => {
                for g in p.gates_mut() {
                    out.push(g.w_x.data_mut());
                    out.push(g.w_h.data_mut());
                    out.push(g.b.as_mut_slice());
                }
            }
        }
    }

    fn zeros_like(&self) -> Self {
        let (h, d) = (self.hidden_size(), self.input_size());
        match self {
            CellParams::Rnn(_) => CellParams::Rnn(RnnCellParams::zeros(h, d)),
            CellParams::Lstm(_) => CellParams::Lstm(LstmCellParams::zeros(h, d)),
        }
    }
}

/// Parameters of a complete forecaster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "SequenceModelRepr")]
pub struct SequenceModel {
    kind: ModelKind,
    input_size: usize,
    hidden_size: usize,
    layers: Vec<CellParams>,
    head_w: Matrix,
    head_b: Vector,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceModelRepr {
    kind: ModelKind,
    input_size: usize,
    hidden_size: usize,
    layers: Vec<CellParams>,
    head_w: Matrix,
    head_b: Vector,
}

impl TryFrom<SequenceModelRepr> for SequenceModel {
    type Error = Error;

    fn try_from(r: SequenceModelRepr) -> Result<Self> {
        SequenceModel::from_parts(r.kind, r.layers, r.head_w, r.head_b).and_then(|m| {
            if m.input_size != r.input_size || m.hidden_size != r.hidden_size {
                Err(Error::Shape(format!(
                    "declared sizes {}/{} disagree with parameter shapes {}/{}",
                    r.input_size, r.hidden_size, m.input_size, m.hidden_size
                )))
            } else {
                Ok(m)
            }
        })
    }
}

impl SequenceModel {
    /// Randomly initialised forecaster taking `(rain, tide, gwl)` inputs.
    pub fn new(sizes: ModelSizes, prng: &mut Prng) -> Result<Self> {
        sizes.validate()?;
        let h = sizes.hidden_size;
        let layers = (0..sizes.layers)
            .map(|l| {
                let d = if l == 0 { PAST_CHANNELS } else { h };
                match sizes.kind {
                    ModelKind::Rnn => CellParams::Rnn(RnnCellParams::random(prng, h, d)),
                    ModelKind::Lstm => CellParams::Lstm(LstmCellParams::random(prng, h, d)),
                }
            })
            .collect();
        let head_w = uniform_init(prng, 1, h, 1.0 / (h as f64).sqrt());
        Ok(SequenceModel {
            kind: sizes.kind,
            input_size: PAST_CHANNELS,
            hidden_size: h,
            layers,
            head_w,
            head_b: Vector::zeros(1),
        })
    }

    /// Assembles a model from explicit parameters, checking every shape.
    pub fn from_parts(kind: ModelKind, layers: Vec<CellParams>, head_w: Matrix, head_b: Vector) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Shape("model needs at least one layer".into()))?;
        let h = first.hidden_size();
        ModelSizes {
            kind,
            hidden_size: h,
            layers: layers.len(),
        }
        .validate()?;
        let input_size = first.input_size();
        if input_size != PAST_CHANNELS {
            return Err(Error::Shape(format!(
                "first layer takes {input_size} inputs, expected {PAST_CHANNELS}"
            )));
        }
        for (l, cell) in layers.iter().enumerate() {
            let d = if l == 0 { PAST_CHANNELS } else { h };
            let what = format!("layer {l}");
            match (kind, cell) {
                (ModelKind::Rnn, CellParams::Rnn(p)) => {
                    check_shape(&p.w_x, (h, d), &what)?;
                    check_shape(&p.w_h, (h, h), &what)?;
                    if p.b.len() != h {
                        return Err(Error::Shape(format!("{what}: bias length {}", p.b.len())));
                    }
                }
                (ModelKind::Lstm, CellParams::Lstm(p)) => {
                    for g in p.gates() {
                        g.check(h, d, &what)?;
                    }
                }
                _ => return Err(Error::Shape(format!("{what}: cell type does not match {kind}"))),
            }
        }
        check_shape(&head_w, (1, h), "head")?;
        if head_b.len() != 1 {
            return Err(Error::Shape("head bias must have length 1".into()));
        }
        let m = SequenceModel {
            kind,
            input_size,
            hidden_size: h,
            layers,
            head_w,
            head_b,
        };
        if m.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::Invalid("model parameters must be finite".into()));
        }
        Ok(m)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn sizes(&self) -> ModelSizes {
        ModelSizes {
            kind: self.kind,
            hidden_size: self.hidden_size,
            layers: self.layers.len(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn layers(&self) -> &[CellParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [CellParams] {
        &mut self.layers
    }

    pub fn head_w(&self) -> &Matrix {
        &self.head_w
    }

    pub fn head_b(&self) -> &Vector {
        &self.head_b
    }

    pub fn head_mut(&mut self) -> (&mut Matrix, &mut Vector) {
        (&mut self.head_w, &mut self.head_b)
    }

    /// Every parameter array in a fixed traversal order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.tensors(&mut out);
        }
        out.push(self.head_w.data());
        out.push(self.head_b.as_slice());
        out
    }

    /// Mutable counterpart of [`SequenceModel::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            l.tensors_mut(&mut out);
        }
        out.push(self.head_w.data_mut());
        out.push(self.head_b.as_mut_slice());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Same architecture, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        SequenceModel {
            kind: self.kind,
            input_size: self.input_size,
            hidden_size: self.hidden_size,
            layers: self.layers.iter().map(CellParams::zeros_like).collect(),
            head_w: Matrix::zeros(1, self.hidden_size),
            head_b: Vector::zeros(1),
        }
    }

    /// Same kind, sizes and layer count.
    pub fn same_architecture(&self, other: &SequenceModel) -> bool {
        self.kind == other.kind
            && self.hidden_size == other.hidden_size
            && self.input_size == other.input_size
            && self.layers.len() == other.layers.len()
    }
}

fn check_shape(m: &Matrix, expected: (usize, usize), what: &str) -> Result<()> {
    if m.shape() != expected {
        return Err(Error::Shape(format!(
            "{what}: matrix is {}x{}, expected {}x{}",
            m.rows(),
            m.cols(),
            expected.0,
            expected.1
        )));
    }
    Ok(())
}

/// One model input: observed history and the exogenous forecast.
#[derive(Clone, Debug, PartialEq)]
pub struct InputWindow {
    /// `lookback × 3`: rain, tide, gwl.
    pub past: Matrix,
    /// `horizon × 2`: forecast rain, forecast tide.
    pub future: Matrix,
}

impl InputWindow {
    pub fn new(past: Matrix, future: Matrix) -> Result<Self> {
        let w = InputWindow { past, future };
        w.check()?;
        Ok(w)
    }

    pub fn lookback(&self) -> usize {
        self.past.rows()
    }

    pub fn horizon(&self) -> usize {
        self.future.rows()
    }

    fn check(&self) -> Result<()> {
        if self.past.cols() != PAST_CHANNELS {
            return Err(Error::Shape(format!(
                "past block has {} columns, expected {PAST_CHANNELS}",
                self.past.cols()
            )));
        }
        if self.future.cols() != FUTURE_CHANNELS {
            return Err(Error::Shape(format!(
                "future block has {} columns, expected {FUTURE_CHANNELS}",
                self.future.cols()
            )));
        }
        if self.past.rows() == 0 || self.future.rows() == 0 {
            return Err(Error::Shape("lookback and horizon must be at least 1".into()));
        }
        Ok(())
    }

    /// Input vector of unrolled step `t`.
    fn step_input(&self, t: usize) -> [f64; PAST_CHANNELS] {
        let lb = self.lookback();
        if t < lb {
            let r = self.past.row(t);
            [r[0], r[1], r[2]]
        } else {
            let r = self.future.row(t - lb);
            [r[0], r[1], 0.0]
        }
    }

    fn steps(&self) -> usize {
        self.lookback() + self.horizon()
    }
}

#[derive(Clone, Debug)]
struct LstmActivations {
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

impl LstmActivations {
    fn zeros(h: usize) -> Self {
        LstmActivations {
            i: vec![0.0; h],
            f: vec![0.0; h],
            o: vec![0.0; h],
            g: vec![0.0; h],
            c: vec![0.0; h],
            tanh_c: vec![0.0; h],
            h: vec![0.0; h],
        }
    }
}

#[derive(Clone, Debug)]
enum StepRecord {
    Rnn { x: Vec<f64>, h: Vec<f64> },
    Lstm { x: Vec<f64>, act: LstmActivations },
}

impl StepRecord {
    fn h(&self) -> &[f64] {
        match self {
            StepRecord::Rnn { h, .. } => h,
            StepRecord::Lstm { act, .. } => &act.h,
        }
    }

    fn c(&self) -> &[f64] {
        match self {
            StepRecord::Rnn { .. } => unreachable!("RNN steps carry no cell state"),
            StepRecord::Lstm { act, .. } => &act.c,
        }
    }
}

/// Intermediate activations of one forward pass, consumed by [`model_backward`].
#[derive(Clone, Debug)]
pub struct ForwardTape {
    kind: ModelKind,
    hidden_size: usize,
    lookback: usize,
    horizon: usize,
    /// `records[layer][step]`
    records: Vec<Vec<StepRecord>>,
    preds: Vector,
}

impl ForwardTape {
    pub fn preds(&self) -> &Vector {
        &self.preds
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

pub fn rnn_cell_forward(x: &Vector, h_prev: &Vector, p: &RnnCellParams) -> Result<Vector> {
    if x.len() != p.input_size() || h_prev.len() != p.hidden_size() {
        return Err(Error::Shape(format!(
            "RNN cell expects x[{}], h[{}], got x[{}], h[{}]",
            p.input_size(),
            p.hidden_size(),
            x.len(),
            h_prev.len()
        )));
    }
    let mut h = vec![0.0; p.hidden_size()];
    p.step(x.as_slice(), h_prev.as_slice(), &mut h);
    Ok(Vector(h))
}

pub fn lstm_cell_forward(x: &Vector, h_prev: &Vector, c_prev: &Vector, p: &LstmCellParams) -> Result<(Vector, Vector)> {
    let (h, d) = (p.hidden_size(), p.input_size());
    if x.len() != d || h_prev.len() != h || c_prev.len() != h {
        return Err(Error::Shape(format!(
            "LSTM cell expects x[{d}], h[{h}], c[{h}], got x[{}], h[{}], c[{}]",
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let mut act = LstmActivations::zeros(h);
    p.step(x.as_slice(), h_prev.as_slice(), c_prev.as_slice(), &mut act);
    Ok((Vector(act.h), Vector(act.c)))
}

fn check_window(w: &InputWindow, m: &SequenceModel) -> Result<()> {
    w.check()?;
    if m.input_size != PAST_CHANNELS {
        return Err(Error::Shape(format!(
            "model takes {} inputs, windows provide {PAST_CHANNELS}",
            m.input_size
        )));
    }
    Ok(())
}

/// Runs the forecaster and records everything backpropagation needs.
pub fn model_forward(w: &InputWindow, m: &SequenceModel) -> Result<(Vector, ForwardTape)> {
    check_window(w, m)?;
    let hs = m.hidden_size;
    let steps = w.steps();
    let mut records: Vec<Vec<StepRecord>> = Vec::with_capacity(m.layers.len());
    for (l, cell) in m.layers.iter().enumerate() {
        let mut layer_rec = Vec::with_capacity(steps);
        let zeros = vec![0.0; hs];
        for t in 0..steps {
            let x: Vec<f64> = if l == 0 {
                w.step_input(t).to_vec()
            } else {
                records[l - 1][t].h().to_vec()
            };
            let h_prev = if t == 0 {
                &zeros[..]
            } else {
                layer_rec_h(&layer_rec, t - 1)
            };
            let rec = match cell {
                CellParams::Rnn(p) => {
                    let mut h = vec![0.0; hs];
                    p.step(&x, h_prev, &mut h);
                    StepRecord::Rnn { x, h }
                }
                CellParams::Lstm(p) => {
                    let c_prev = if t == 0 { &zeros[..] } else { layer_rec[t - 1].c() };
                    let mut act = LstmActivations::zeros(hs);
                    p.step(&x, h_prev, c_prev, &mut act);
                    StepRecord::Lstm { x, act }
                }
            };
            layer_rec.push(rec);
        }
        records.push(layer_rec);
    }
    let top = records.last().expect("at least one layer");
    let lb = w.lookback();
    let preds: Vec<f64> = (0..w.horizon()).map(|k| head(m, top[lb + k].h())).collect();
    let preds = Vector(preds);
    let tape = ForwardTape {
        kind: m.kind,
        hidden_size: hs,
        lookback: lb,
        horizon: w.horizon(),
        records,
        preds: preds.clone(),
    };
    Ok((preds, tape))
}

fn layer_rec_h(rec: &[StepRecord], t: usize) -> &[f64] {
    rec[t].h()
}

#[inline]
fn head(m: &SequenceModel, h: &[f64]) -> f64 {
    m.head_b[0] + m.head_w.data().iter().zip(h).map(|(w, v)| w * v).sum::<f64>()
}

/// Forecast without recording a tape. Produces exactly the values of [`model_forward`].
pub fn predict(w: &InputWindow, m: &SequenceModel) -> Result<Vector> {
    check_window(w, m)?;
    let hs = m.hidden_size;
    let n = m.layers.len();
    let mut h = vec![vec![0.0; hs]; n];
    let mut c = vec![vec![0.0; hs]; n];
    let mut scratch = vec![0.0; hs];
    let mut act = LstmActivations::zeros(hs);
    let lb = w.lookback();
    let mut preds = Vec::with_capacity(w.horizon());
    for t in 0..w.steps() {
        let input = w.step_input(t);
        for l in 0..n {
            let (below, rest) = h.split_at_mut(l);
            let x: &[f64] = if l == 0 { &input } else { &below[l - 1] };
            match &m.layers[l] {
                CellParams::Rnn(p) => {
                    p.step(x, &rest[0], &mut scratch);
                    rest[0].copy_from_slice(&scratch);
                }
                CellParams::Lstm(p) => {
                    p.step(x, &rest[0], &c[l], &mut act);
                    rest[0].copy_from_slice(&act.h);
                    c[l].copy_from_slice(&act.c);
                }
            }
        }
        if t >= lb {
            preds.push(head(m, &h[n - 1]));
        }
    }
    Ok(Vector(preds))
}

/// Loss gradient with respect to every model parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    tree: SequenceModel,
}

impl Gradients {
    pub fn zeros_for(m: &SequenceModel) -> Self {
        Gradients { tree: m.zeros_like() }
    }

    /// Gradient arrays in the same order as [`SequenceModel::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.tree.tensors()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.tree.tensors_mut()
    }

    /// The gradient laid out as a model-shaped tree.
    pub fn as_tree(&self) -> &SequenceModel {
        &self.tree
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`. Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for t in self.tensors_mut() {
                for g in t.iter_mut() {
                    *g *= s;
                }
            }
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|g| g.is_finite()))
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Default global-norm bound applied by [`model_backward`].
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// Backpropagation through time followed by global-norm clipping at `clip_norm`.
pub fn model_backward(
    tape: &ForwardTape,
    dloss_dpreds: &Vector,
    m: &SequenceModel,
    clip_norm: f64,
) -> Result<Gradients> {
    let mut g = backward_unclipped(tape, dloss_dpreds, m)?;
    g.clip_global_norm(clip_norm);
    Ok(g)
}

/// Exact gradients of the tape's forward pass, without clipping.
pub fn backward_unclipped(tape: &ForwardTape, dloss_dpreds: &Vector, m: &SequenceModel) -> Result<Gradients> {
    if tape.kind != m.kind || tape.hidden_size != m.hidden_size || tape.records.len() != m.layers.len() {
        return Err(Error::Shape("tape was not produced by this model".into()));
    }
    if dloss_dpreds.len() != tape.horizon {
        return Err(Error::Shape(format!(
            "{} prediction gradients for horizon {}",
            dloss_dpreds.len(),
            tape.horizon
        )));
    }
    let hs = m.hidden_size;
    let steps = tape.lookback + tape.horizon;
    let mut grads = Gradients::zeros_for(m);

    // Gradient flowing into the top layer's hidden output at every step.
    let mut dh_in = vec![vec![0.0; hs]; steps];
    {
        let top = tape.records.last().expect("at least one layer");
        let (gw, gb) = grads.tree.head_mut();
        for (k, &d) in dloss_dpreds.as_slice().iter().enumerate() {
            let t = tape.lookback + k;
            gb[0] += d;
            for (gwj, hj) in gw.data_mut().iter_mut().zip(top[t].h()) {
                *gwj += d * hj;
            }
            for (dh, w) in dh_in[t].iter_mut().zip(m.head_w.data()) {
                *dh += d * w;
            }
        }
    }

    for l in (0..m.layers.len()).rev() {
        let rec = &tape.records[l];
        let d_in = rec[0].x_len();
        let mut dx_seq = vec![vec![0.0; d_in]; steps];
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        let zeros = vec![0.0; hs];
        match (&m.layers[l], &mut grads.tree.layers[l]) {
            (CellParams::Rnn(p), CellParams::Rnn(gp)) => {
                let mut dz = vec![0.0; hs];
                for t in (0..steps).rev() {
                    let StepRecord::Rnn { x, h } = &rec[t] else {
                        unreachable!()
                    };
                    let h_prev = if t == 0 { &zeros[..] } else { rec[t - 1].h() };
                    for k in 0..hs {
                        let dh = dh_in[t][k] + dh_next[k];
                        dz[k] = dh * (1.0 - h[k] * h[k]);
                    }
                    gp.w_x.add_outer(&dz, x);
                    gp.w_h.add_outer(&dz, h_prev);
                    for (b, d) in gp.b.as_mut_slice().iter_mut().zip(&dz) {
                        *b += d;
                    }
                    p.w_x.mul_vec_transposed_into(&dz, &mut dx_seq[t]);
                    dh_next.iter_mut().for_each(|v| *v = 0.0);
                    p.w_h.mul_vec_transposed_into(&dz, &mut dh_next);
                }
            }
            (CellParams::Lstm(p), CellParams::Lstm(gp)) => {
                let mut dz = [vec![0.0; hs], vec![0.0; hs], vec![0.0; hs], vec![0.0; hs]];
                for t in (0..steps).rev() {
                    let StepRecord::Lstm { x, act } = &rec[t] else {
                        unreachable!()
                    };
                    let h_prev = if t == 0 { &zeros[..] } else { rec[t - 1].h() };
                    let c_prev = if t == 0 { &zeros[..] } else { rec[t - 1].c() };
                    for k in 0..hs {
                        let dh = dh_in[t][k] + dh_next[k];
                        let d_o = dh * act.tanh_c[k];
                        let dc = dc_next[k] + dh * act.o[k] * (1.0 - act.tanh_c[k] * act.tanh_c[k]);
                        let di = dc * act.g[k];
                        let dg = dc * act.i[k];
                        let df = dc * c_prev[k];
                        dc_next[k] = dc * act.f[k];
                        dz[0][k] = di * act.i[k] * (1.0 - act.i[k]);
                        dz[1][k] = df * act.f[k] * (1.0 - act.f[k]);
                        dz[2][k] = d_o * act.o[k] * (1.0 - act.o[k]);
                        dz[3][k] = dg * (1.0 - act.g[k] * act.g[k]);
                    }
                    dh_next.iter_mut().for_each(|v| *v = 0.0);
                    for ((gate, ggate), dzg) in p.gates().into_iter().zip(gp.gates_mut()).zip(&dz) {
                        ggate.w_x.add_outer(dzg, x);
                        ggate.w_h.add_outer(dzg, h_prev);
                        for (b, d) in ggate.b.as_mut_slice().iter_mut().zip(dzg) {
                            *b += d;
                        }
                        gate.w_x.mul_vec_transposed_into(dzg, &mut dx_seq[t]);
                        gate.w_h.mul_vec_transposed_into(dzg, &mut dh_next);
                    }
                }
            }
            _ => return Err(Error::Shape("tape layer kind does not match model".into())),
        }
        dh_in = dx_seq;
    }
    Ok(grads)
}

impl StepRecord {
    fn x_len(&self) -> usize {
        match self {
            StepRecord::Rnn { x, .. } | StepRecord::Lstm { x, .. } => x.len(),
        }
    }
}

/// Mean-squared-error loss of one window.
pub fn window_loss(m: &SequenceModel, w: &InputWindow, target: &Vector) -> Result<f64> {
    mse_loss(&predict(w, m)?, target)
}

/// `∂(MSE)/∂preds`.
pub fn mse_grad(preds: &Vector, target: &Vector) -> Vector {
    let n = preds.len() as f64;
    Vector(
        preds
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(p, y)| 2.0 * (p - y) / n)
            .collect(),
    )
}

/// Analytic gradients against central finite differences.
///
/// Returns the largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-12)`
/// over every parameter.
pub fn gradient_check(m: &SequenceModel, w: &InputWindow, target: &Vector, eps: f64) -> Result<f64> {
    check_against_finite_differences(m, w, target, eps, false)
}

/// [`gradient_check`] with one analytic gradient entry sign-flipped, the one
/// of largest magnitude. Used to confirm the harness detects a broken backward pass.
pub fn gradient_check_mutated(m: &SequenceModel, w: &InputWindow, target: &Vector, eps: f64) -> Result<f64> {
    check_against_finite_differences(m, w, target, eps, true)
}

fn check_against_finite_differences(
    m: &SequenceModel,
    w: &InputWindow,
    target: &Vector,
    eps: f64,
    mutate: bool,
) -> Result<f64> {
    if !(1e-8..=1e-4).contains(&eps) {
        return Err(Error::Invalid(format!("eps {eps} outside [1e-8, 1e-4]")));
    }
    let (preds, tape) = model_forward(w, m)?;
    let grads = backward_unclipped(&tape, &mse_grad(&preds, target), m)?;
    let mut analytic: Vec<f64> = grads.tensors().concat();
    if mutate {
        let worst = analytic
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        analytic[worst] = -analytic[worst];
    }

    let mut probe = m.clone();
    let mut max_rel = 0.0f64;
    let mut flat = 0;
    let n_tensors = probe.tensors().len();
    for ti in 0..n_tensors {
        let len = probe.tensors()[ti].len();
        for j in 0..len {
            let orig = probe.tensors()[ti][j];
            probe.tensors_mut()[ti][j] = orig + eps;
            let plus = predict(w, &probe)?;
            probe.tensors_mut()[ti][j] = orig - eps;
            let minus = predict(w, &probe)?;
            probe.tensors_mut()[ti][j] = orig;
            let numeric = loss_difference(&plus, &minus, target) / (2.0 * eps);
            let a = analytic[flat];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            max_rel = max_rel.max(rel);
            flat += 1;
        }
    }
    Ok(max_rel)
}

/// `mse(plus) − mse(minus)`, factored as `Σ (p⁺ − p⁻)(p⁺ + p⁻ − 2y) / n` so the
/// two nearly equal losses are never subtracted.
fn loss_difference(plus: &Vector, minus: &Vector, target: &Vector) -> f64 {
    let n = target.len() as f64;
    plus.as_slice()
        .iter()
        .zip(minus.as_slice())
        .zip(target.as_slice())
        .map(|((p, m), y)| (p - m) * (p + m - 2.0 * y))
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(prng: &mut Prng, lookback: usize, horizon: usize) -> InputWindow {
        let past = (0..lookback * 3).map(|_| prng.unit()).collect();
        let future = (0..horizon * 2).map(|_| prng.unit()).collect();
        InputWindow::new(
            Matrix::from_vec(lookback, 3, past).unwrap(),
            Matrix::from_vec(horizon, 2, future).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn rnn_cell_zero_cases() {
        let p = RnnCellParams::zeros(3, 2);
        let h = rnn_cell_forward(&Vector(vec![0.4, -1.0]), &Vector(vec![0.1, 0.2, 0.3]), &p).unwrap();
        assert_eq!(h.0, vec![0.0; 3]);
        let mut prng = Prng::new(1);
        let mut p = RnnCellParams::random(&mut prng, 3, 2);
        p.b = Vector::zeros(3);
        let h = rnn_cell_forward(&Vector::zeros(2), &Vector::zeros(3), &p).unwrap();
        assert_eq!(h.0, vec![0.0; 3]);
    }

    #[test]
    fn rnn_cell_rejects_bad_shapes() {
        let p = RnnCellParams::zeros(3, 2);
        assert!(rnn_cell_forward(&Vector::zeros(3), &Vector::zeros(3), &p).is_err());
    }

    #[test]
    fn lstm_cell_zero_params() {
        let p = LstmCellParams::zeros(2, 3);
        let (h, c) = lstm_cell_forward(&Vector::zeros(3), &Vector::zeros(2), &Vector::zeros(2), &p).unwrap();
        assert_eq!(h.0, vec![0.0, 0.0]);
        assert_eq!(c.0, vec![0.0, 0.0]);
    }

    fn saturated_memory_cell(prng: &mut Prng) -> LstmCellParams {
        let mut p = LstmCellParams::random(prng, 3, 2);
        p.forget.w_x = Matrix::zeros(3, 2);
        p.forget.w_h = Matrix::zeros(3, 3);
        p.forget.b = Vector(vec![50.0; 3]);
        p.input.w_x = Matrix::zeros(3, 2);
        p.input.w_h = Matrix::zeros(3, 3);
        p.input.b = Vector(vec![-50.0; 3]);
        p.candidate = GateParams::zeros(3, 2);
        p
    }

    #[test]
    fn lstm_saturated_gates_hold_memory() {
        let mut prng = Prng::new(9);
        let p = saturated_memory_cell(&mut prng);
        let c0 = Vector(vec![0.7, -1.3, 2.0]);
        let (_, c) = lstm_cell_forward(&Vector(vec![0.5, 0.1]), &Vector(vec![0.2, 0.0, -0.4]), &c0, &p).unwrap();
        for (a, b) in c.0.iter().zip(&c0.0) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn lstm_memory_persists_over_100_steps() {
        let mut prng = Prng::new(10);
        let p = saturated_memory_cell(&mut prng);
        let mut h = Vector::zeros(3);
        let mut c = Vector(vec![0.9, -0.2, 0.05]);
        for _ in 0..100 {
            let x = Vector(vec![prng.uniform(-1.0, 1.0), prng.uniform(-1.0, 1.0)]);
            let (h1, c1) = lstm_cell_forward(&x, &h, &c, &p).unwrap();
            for (a, b) in c1.0.iter().zip(&c.0) {
                assert!((a - b).abs() <= 1e-12);
            }
            h = h1;
            c = c1;
        }
    }

    #[test]
    fn zero_model_predicts_head_bias() {
        let mut prng = Prng::new(2);
        let m = SequenceModel::new(ModelSizes::deep_lstm(), &mut prng).unwrap();
        let mut z = m.zeros_like();
        z.head_mut().1[0] = 0.37;
        let w = window(&mut prng, 5, 4);
        let (p, _) = model_forward(&w, &z).unwrap();
        assert_eq!(p.0, vec![0.37; 4]);
    }

    #[test]
    fn forward_is_pure_and_matches_predict() {
        for sizes in [ModelSizes::shallow_rnn(), ModelSizes::deep_lstm()] {
            let mut prng = Prng::new(4);
            let m = SequenceModel::new(sizes, &mut prng).unwrap();
            let w = window(&mut prng, 12, 5);
            let (a, _) = model_forward(&w, &m).unwrap();
            let (b, _) = model_forward(&w, &m).unwrap();
            assert_eq!(a, b);
            assert_eq!(predict(&w, &m).unwrap(), a);
        }
    }

    #[test]
    fn forward_rejects_bad_windows() {
        let mut prng = Prng::new(2);
        let m = SequenceModel::new(ModelSizes::shallow_rnn(), &mut prng).unwrap();
        let bad = InputWindow {
            past: Matrix::zeros(4, 2),
            future: Matrix::zeros(2, 2),
        };
        assert!(model_forward(&bad, &m).is_err());
        assert!(InputWindow::new(Matrix::zeros(4, 3), Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn hidden_states_bounded() {
        let mut prng = Prng::new(5);
        let m = SequenceModel::new(ModelSizes::deep_lstm(), &mut prng).unwrap();
        let past = (0..30).map(|_| prng.uniform(-100.0, 100.0)).collect();
        let future = (0..10).map(|_| prng.uniform(-100.0, 100.0)).collect();
        let w = InputWindow::new(
            Matrix::from_vec(10, 3, past).unwrap(),
            Matrix::from_vec(5, 2, future).unwrap(),
        )
        .unwrap();
        let (_, tape) = model_forward(&w, &m).unwrap();
        for layer in &tape.records {
            for r in layer {
                assert!(r.h().iter().all(|v| v.abs() <= 1.0));
            }
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut prng = Prng::new(6);
        let m = SequenceModel::new(ModelSizes::deep_lstm(), &mut prng).unwrap();
        let w = window(&mut prng, 6, 3);
        let (_, tape) = model_forward(&w, &m).unwrap();
        let g = model_backward(&tape, &Vector::zeros(3), &m, DEFAULT_CLIP_NORM).unwrap();
        assert_eq!(g.global_norm(), 0.0);
    }

    #[test]
    fn head_bias_gradient_is_twice_the_error() {
        let mut prng = Prng::new(7);
        let m = SequenceModel::new(ModelSizes::shallow_rnn(), &mut prng).unwrap();
        let w = window(&mut prng, 4, 1);
        let target = Vector(vec![0.25]);
        let (p, tape) = model_forward(&w, &m).unwrap();
        let g = backward_unclipped(&tape, &mse_grad(&p, &target), &m).unwrap();
        assert!((g.as_tree().head_b()[0] - 2.0 * (p[0] - 0.25)).abs() < 1e-15);
    }

    #[test]
    fn tape_model_mismatch_is_rejected() {
        let mut prng = Prng::new(8);
        let rnn = SequenceModel::new(ModelSizes::shallow_rnn(), &mut prng).unwrap();
        let lstm = SequenceModel::new(ModelSizes::deep_lstm(), &mut prng).unwrap();
        let w = window(&mut prng, 4, 2);
        let (_, tape) = model_forward(&w, &rnn).unwrap();
        assert!(backward_unclipped(&tape, &Vector::zeros(2), &lstm).is_err());
        assert!(backward_unclipped(&tape, &Vector::zeros(3), &rnn).is_err());
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut prng = Prng::new(11);
        let m = SequenceModel::new(ModelSizes::deep_lstm(), &mut prng).unwrap();
        let w = window(&mut prng, 8, 3);
        let (_, tape) = model_forward(&w, &m).unwrap();
        let big = Vector(vec![1e4, -1e4, 1e4]);
        let g = model_backward(&tape, &big, &m, 5.0).unwrap();
        assert!((g.global_norm() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_check_small_models() {
        let mut prng = Prng::new(12);
        for kind in [ModelKind::Rnn, ModelKind::Lstm] {
            let sizes = ModelSizes {
                kind,
                hidden_size: 4,
                layers: if kind == ModelKind::Rnn { 1 } else { 2 },
            };
            let mut m = SequenceModel::new(sizes, &mut prng).unwrap();
            // Weights well away from zero keep every gradient above finite-difference round-off.
            let n = m.tensors().len();
            for (i, t) in m.tensors_mut().into_iter().enumerate() {
                if (i < n - 2 && i % 3 != 2) || i == n - 2 {
                    t.iter_mut().for_each(|v| *v = prng.uniform(-1.0, 1.0));
                }
            }
            let w = window(&mut prng, 6, 3);
            let target = Vector(vec![0.2, 0.5, 0.9]);
            let err = gradient_check(&m, &w, &target, 1e-6).unwrap();
            assert!(err < 1e-4, "{kind}: {err}");
            let mutated = gradient_check_mutated(&m, &w, &target, 1e-6).unwrap();
            assert!(mutated > 1e-2, "{kind}: {mutated}");
        }
    }

    #[test]
    fn sizes_enforce_shallow_and_deep() {
        let mut bad = ModelSizes::shallow_rnn();
        bad.layers = 2;
        assert!(bad.validate().is_err());
        let mut bad = ModelSizes::deep_lstm();
        bad.layers = 1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn lstm_forget_bias_starts_at_one() {
        let mut prng = Prng::new(13);
        let m = SequenceModel::new(ModelSizes::deep_lstm(), &mut prng).unwrap();
        for l in m.layers() {
            let CellParams::Lstm(p) = l else { panic!() };
            assert!(p.forget.b.as_slice().iter().all(|&b| b == 1.0));
            assert!(p.input.b.as_slice().iter().all(|&b| b == 0.0));
            let bound = 1.0 / ((p.input_size() + p.hidden_size()) as f64).sqrt();
            assert!(p.input.w_x.data().iter().all(|v| v.abs() <= bound));
        }
    }
}
