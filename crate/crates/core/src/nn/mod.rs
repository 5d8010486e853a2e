//! Recurrent classifier: reshape `(2T) → (T, 2)`, one GRU or LSTM layer,
//! dense layer over the final hidden state, softmax over three classes.

mod cell;
mod io;
mod optim;
mod weights;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cell::CellState;
pub use io::{load_model, read_model, save_model, write_model, MAGIC};
pub use optim::{OptimizerState, RmsProp};
pub use weights::{Weights, TENSOR_NAMES};

use crate::preprocess::{ModelInput, Standardizer};
use crate::seqdata::{Label, MAX_LEN};

pub const CLASSES: usize = 3;
/// Floor applied to the labelled probability before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input has {got} values; expected {expected}")]
    InputShape { got: usize, expected: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("weights do not match the model config")]
    WeightShape,
    #[error("label {0} out of range")]
    BadLabel(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("model file truncated: {0}")]
    Truncated(String),
    #[error("malformed model header: {0}")]
    Header(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        })
    }
}

impl FromStr for CellKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(format!("unknown cell type {other:?}; expected gru or lstm")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub hidden: usize,
    pub input_channels: usize,
    pub time_steps: usize,
    pub classes: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(cell: CellKind, hidden: usize) -> Self {
        Self { cell, hidden, input_channels: 2, time_steps: MAX_LEN, classes: CLASSES, seed: 0 }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn with_time_steps(self, time_steps: usize) -> Self {
        Self { time_steps, ..self }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.hidden == 0 {
            return bad("hidden must be positive");
        }
        if self.input_channels != 2 {
            return bad("input_channels must be 2");
        }
        if self.classes != CLASSES {
            return bad("classes must be 3");
        }
        if self.time_steps == 0 {
            return bad("time_steps must be positive");
        }
        Ok(())
    }

    /// Parameter count of the memory layer plus the dense head.
    pub fn param_count(&self) -> usize {
        let (i, n) = (self.input_channels, self.hidden);
        self.cell.gates() * (i * n + n * n + n) + n * self.classes + self.classes
    }

    /// Size of the weights when stored as 32-bit floats.
    pub fn serialized_bytes(&self) -> usize {
        4 * self.param_count()
    }
}

/// `max(0, min(1, 0.2 x + 0.5))`.
#[inline]
pub fn hard_sigmoid(x: f64) -> f64 {
    (0.2 * x + 0.5).clamp(0.0, 1.0)
}

/// Derivative of [`hard_sigmoid`] expressed through its output: 0.2 strictly
/// inside the linear region, 0 on the clipped parts.
#[inline]
pub fn hard_sigmoid_grad(y: f64) -> f64 {
    if y > 0.0 && y < 1.0 {
        0.2
    } else {
        0.0
    }
}

pub fn softmax(logits: &[f64; CLASSES]) -> [f64; CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.map(|l| (l - max).exp());
    let sum: f64 = exp.iter().sum();
    exp.map(|e| e / sum)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Class probabilities in nod, shake, other order.
    pub probs: [f64; CLASSES],
    pub label: Label,
}

impl Prediction {
    pub fn from_probs(probs: [f64; CLASSES]) -> Self {
        // first maximum wins
        let best = (1..CLASSES).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        Self { probs, label: Label::from_index(best).expect("class index in range") }
    }
}

/// `-ln p[label]`, with the probability floored at [`PROB_FLOOR`].
pub fn loss_sparse_ce(p: &Prediction, label: usize) -> f64 {
    -p.probs[label].max(PROB_FLOOR).ln()
}

fn check_input(cfg: &ModelConfig, input: &ModelInput) -> Result<(), NnError> {
    let expected = cfg.time_steps * cfg.input_channels;
    if input.values.len() != expected {
        return Err(NnError::InputShape { got: input.values.len(), expected });
    }
    if input.values.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("input"));
    }
    Ok(())
}

fn dense(cfg: &ModelConfig, w: &Weights, h: &[f64]) -> [f64; CLASSES] {
    let mut logits = [0.0; CLASSES];
    logits.copy_from_slice(&w.dense_bias);
    for (k, &hk) in h.iter().enumerate() {
        cell::axpy(&mut logits, hk, &w.dense_kernel[k * cfg.classes..(k + 1) * cfg.classes]);
    }
    logits
}

fn run(
    cfg: &ModelConfig,
    w: &Weights,
    input: &ModelInput,
    mut trace: Option<&mut cell::Trace>,
) -> Result<(Vec<f64>, Prediction), NnError> {
    check_input(cfg, input)?;
    let mut state = CellState::zeros(cfg);
    let mut scratch = cell::Scratch::new(cfg);
    for x in input.values.chunks_exact(cfg.input_channels) {
        cell::step(cfg, w, x, &mut state, &mut scratch, trace.as_deref_mut());
    }
    let logits = dense(cfg, w, &state.h);
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(NnError::NonFinite("logits"));
    }
    Ok((state.h, Prediction::from_probs(softmax(&logits))))
}

/// Runs the recurrence over every time step from a zero state and
/// classifies the final hidden state.
pub fn forward(cfg: &ModelConfig, w: &Weights, input: &ModelInput) -> Result<Prediction, NnError> {
    run(cfg, w, input, None).map(|(_, p)| p)
}

/// Final hidden state after the whole input, for inspection.
pub fn final_state(cfg: &ModelConfig, w: &Weights, input: &ModelInput) -> Result<Vec<f64>, NnError> {
    run(cfg, w, input, None).map(|(h, _)| h)
}

/// Mean-loss gradients of one minibatch, plus the forward metrics.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub grads: Weights,
    pub mean_loss: f64,
    pub correct: usize,
}

/// Loss and gradient of one example, scaled by `scale`, added into `grads`.
fn example_gradient(
    cfg: &ModelConfig,
    w: &Weights,
    ut: &[f64],
    input: &ModelInput,
    label: usize,
    scale: f64,
    grads: &mut Weights,
) -> Result<(f64, bool), NnError> {
    let mut trace = cell::Trace::new(cfg, cfg.time_steps);
    let (h, pred) = run(cfg, w, input, Some(&mut trace))?;
    let loss = loss_sparse_ce(&pred, label);

    let mut dlogits = [0.0; CLASSES];
    if pred.probs[label] >= PROB_FLOOR {
        for (c, d) in dlogits.iter_mut().enumerate() {
            let target = if c == label { 1.0 } else { 0.0 };
            *d = scale * (pred.probs[c] - target);
        }
    }
    for (gb, d) in grads.dense_bias.iter_mut().zip(&dlogits) {
        *gb += d;
    }
    let mut dh = vec![0.0; cfg.hidden];
    for (k, &hk) in h.iter().enumerate() {
        let row = &w.dense_kernel[k * cfg.classes..(k + 1) * cfg.classes];
        dh[k] = cell::dot(row, &dlogits);
        cell::axpy(&mut grads.dense_kernel[k * cfg.classes..(k + 1) * cfg.classes], hk, &dlogits);
    }
    cell::backward(cfg, ut, &input.values, &trace, &dh, grads);
    Ok((loss, pred.label.index() == label))
}

/// Examples per gradient chunk; chunk sums are combined in order so the
/// result does not depend on the thread count.
const CHUNK: usize = 8;

/// Exact gradients of the mean batch loss by backpropagation through time.
pub fn backward(cfg: &ModelConfig, w: &Weights, batch: &[(&ModelInput, usize)]) -> Result<BatchGradient, NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    if let Some(&(_, bad)) = batch.iter().find(|(_, l)| *l >= cfg.classes) {
        return Err(NnError::BadLabel(bad));
    }
    let scale = 1.0 / batch.len() as f64;
    let ut = cell::transpose(&w.recurrent, cfg.hidden, cfg.cell.gates() * cfg.hidden);
    let partials = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = Weights::zeros(cfg);
            let mut loss = 0.0;
            let mut correct = 0;
            for &(input, label) in chunk {
                let (l, ok) = example_gradient(cfg, w, &ut, input, label, scale, &mut grads)?;
                loss += l;
                correct += usize::from(ok);
            }
            Ok((grads, loss, correct))
        })
        .collect::<Result<Vec<_>, NnError>>()?;

    let mut iter = partials.into_iter();
    let (mut grads, mut loss, mut correct) = iter.next().expect("non-empty batch");
    for (g, l, c) in iter {
        grads.add_scaled(&g, 1.0);
        loss += l;
        correct += c;
    }
    Ok(BatchGradient { grads, mean_loss: loss * scale, correct })
}

/// A trained classifier together with the standardizer fitted on its
/// training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub weights: Weights,
    pub standardizer: Standardizer,
}

impl Model {
    pub fn new(config: ModelConfig, weights: Weights, standardizer: Standardizer) -> Result<Self, NnError> {
        config.validate()?;
        if !weights.matches(&config) {
            return Err(NnError::WeightShape);
        }
        Ok(Self { config, weights, standardizer })
    }

    pub fn init(config: ModelConfig, standardizer: Standardizer) -> Result<Self, NnError> {
        config.validate()?;
        Ok(Self { weights: Weights::init(&config), config, standardizer })
    }

    pub fn predict(&self, input: &ModelInput) -> Result<Prediction, NnError> {
        forward(&self.config, &self.weights, input)
    }

    /// Rounds every weight to 32-bit precision, as stored on disk.
    pub fn quantized(&self) -> Self {
        let mut m = self.clone();
        for v in m.weights.iter_mut() {
            *v = *v as f32 as f64;
        }
        m
    }
}
