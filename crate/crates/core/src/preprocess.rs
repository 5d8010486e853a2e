//! Channel dropping, standardization, zero padding and interleaved
//! flattening into the model's input vector.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seqdata::{Dataset, EulerSample, GestureSequence, MAX_LEN};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("sequence already has two channels")]
    AlreadyPlanar,
    #[error("channel {0} has zero variance in the training data")]
    ZeroVariance(usize),
    #[error("need at least 2 training samples to fit a standardizer, got {0}")]
    TooFewSamples(usize),
    #[error("sequence of length {len} exceeds the padded length {max}")]
    TooLong { len: usize, max: usize },
}

/// Removes the third Euler angle, keeping (pitch, second) in order.
pub fn drop_third_channel(seq: &GestureSequence) -> Result<GestureSequence, PreprocessError> {
    if seq.channels() == Some(2) {
        return Err(PreprocessError::AlreadyPlanar);
    }
    Ok(to_planar(seq))
}

/// Like [`drop_third_channel`] but accepts sequences that are already planar.
pub fn to_planar(seq: &GestureSequence) -> GestureSequence {
    let samples = seq.samples.iter().map(|s| EulerSample::planar(s.pitch, s.second)).collect();
    GestureSequence { samples, ..seq.clone() }
}

pub fn to_planar_dataset(d: &Dataset) -> Dataset {
    Dataset::new(d.sequences.iter().map(to_planar).collect())
}

/// Per-channel affine map to zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer { mean: [0.0, 0.0], std: [1.0, 1.0] };

    #[inline]
    pub fn apply(&self, pitch: f64, second: f64) -> (f64, f64) {
        ((pitch - self.mean[0]) / self.std[0], (second - self.mean[1]) / self.std[1])
    }

    #[inline]
    pub fn invert(&self, pitch: f64, second: f64) -> (f64, f64) {
        (pitch * self.std[0] + self.mean[0], second * self.std[1] + self.mean[1])
    }
}

/// Mean and population standard deviation per channel over every real
/// (unpadded) sample of the training data.
pub fn fit_standardizer(train: &Dataset) -> Result<Standardizer, PreprocessError> {
    let samples = || train.sequences.iter().flat_map(|s| &s.samples);
    let n = samples().count();
    if n < 2 {
        return Err(PreprocessError::TooFewSamples(n));
    }
    let mut mean = [0.0; 2];
    for s in samples() {
        mean[0] += s.pitch;
        mean[1] += s.second;
    }
    mean = mean.map(|m| m / n as f64);
    let mut var = [0.0; 2];
    for s in samples() {
        var[0] += (s.pitch - mean[0]).powi(2);
        var[1] += (s.second - mean[1]).powi(2);
    }
    let std = var.map(|v| (v / n as f64).sqrt());
    if let Some(c) = std.iter().position(|&s| s.is_nan() || s <= 0.0) {
        return Err(PreprocessError::ZeroVariance(c));
    }
    Ok(Standardizer { mean, std })
}

/// Standardizes pitch and second channel; a third channel is dropped.
pub fn apply_standardizer(seq: &GestureSequence, s: &Standardizer) -> GestureSequence {
    let samples = seq
        .samples
        .iter()
        .map(|e| {
            let (p, q) = s.apply(e.pitch, e.second);
            EulerSample::planar(p, q)
        })
        .collect();
    GestureSequence { samples, ..seq.clone() }
}

/// Flattened, zero-padded model input: `[p0, s0, p1, s1, …, 0, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub values: Vec<f64>,
    pub true_len: usize,
}

impl ModelInput {
    /// Number of time steps the vector encodes.
    pub fn time_steps(&self) -> usize {
        self.values.len() / 2
    }

    /// Writes interleaved pairs into a zeroed buffer of `time_steps` steps.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>, time_steps: usize) -> Result<Self, PreprocessError> {
        let mut values = vec![0.0; 2 * time_steps];
        let mut true_len = 0;
        for (i, (p, s)) in pairs.into_iter().enumerate() {
            if i >= time_steps {
                return Err(PreprocessError::TooLong { len: i + 1, max: time_steps });
            }
            values[2 * i] = p;
            values[2 * i + 1] = s;
            true_len = i + 1;
        }
        Ok(Self { values, true_len })
    }

    /// The `true_len` leading (pitch, second) pairs.
    pub fn unflatten(&self) -> Vec<(f64, f64)> {
        self.values[..2 * self.true_len].chunks_exact(2).map(|c| (c[0], c[1])).collect()
    }
}

/// Pads with trailing zeros to 240 steps and interleaves the two channels.
pub fn pad_and_flatten(seq: &GestureSequence) -> Result<ModelInput, PreprocessError> {
    pad_and_flatten_to(seq, MAX_LEN)
}

pub fn pad_and_flatten_to(seq: &GestureSequence, time_steps: usize) -> Result<ModelInput, PreprocessError> {
    if seq.len() > time_steps {
        return Err(PreprocessError::TooLong { len: seq.len(), max: time_steps });
    }
    ModelInput::from_pairs(seq.samples.iter().map(|s| (s.pitch, s.second)), time_steps)
}

/// Standardize, then pad and flatten.
pub fn prepare(seq: &GestureSequence, s: &Standardizer, time_steps: usize) -> Result<ModelInput, PreprocessError> {
    pad_and_flatten_to(&apply_standardizer(seq, s), time_steps)
}
