//! Sliding-window classification of a live sample stream.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::nn::{Model, NnError, Prediction};
use crate::preprocess::ModelInput;
use crate::seqdata::{Dataset, Label, MAX_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub buffer_len: usize,
    pub stride: usize,
    /// Predict before the buffer is full, padding the front with zeros.
    pub warm_start: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self { buffer_len: MAX_LEN, stride: 15, warm_start: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamPrediction {
    /// 1-based count of samples received when the prediction was made.
    pub sample_index: u64,
    pub prediction: Prediction,
}

/// Keeps the most recent `buffer_len` samples and classifies them every
/// `stride` samples.
#[derive(Debug, Clone)]
pub struct StreamPredictor {
    model: Arc<Model>,
    cfg: StreamConfig,
    buffer: VecDeque<(f64, f64)>,
    samples_seen: u64,
}

impl StreamPredictor {
    pub fn new(model: Arc<Model>, cfg: StreamConfig) -> Result<Self, NnError> {
        if cfg.stride == 0 {
            return Err(NnError::InvalidConfig("stride must be >= 1".into()));
        }
        if cfg.buffer_len != model.config.time_steps {
            return Err(NnError::InvalidConfig(format!(
                "buffer length {} does not match model time steps {}",
                cfg.buffer_len, model.config.time_steps
            )));
        }
        Ok(Self { buffer: VecDeque::with_capacity(cfg.buffer_len), model, cfg, samples_seen: 0 })
    }

    pub fn config(&self) -> StreamConfig {
        self.cfg
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    pub fn set_warm_start(&mut self, on: bool) {
        self.cfg.warm_start = on;
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
        self.samples_seen = 0;
    }

    fn due(&self) -> bool {
        let (n, len, stride) = (self.samples_seen, self.cfg.buffer_len as u64, self.cfg.stride as u64);
        if n >= len {
            (n - len) % stride == 0
        } else {
            self.cfg.warm_start && n % stride == 0
        }
    }

    /// Appends one raw sample; returns a prediction when one is due.
    /// Non-finite samples are rejected without touching the buffer.
    pub fn push_sample(&mut self, pitch: f64, second: f64) -> Result<Option<StreamPrediction>, NnError> {
        if !pitch.is_finite() || !second.is_finite() {
            return Err(NnError::NonFinite("sample"));
        }
        if self.buffer.len() == self.cfg.buffer_len {
            self.buffer.pop_front();
        }
        self.buffer.push_back((pitch, second));
        self.samples_seen += 1;
        if !self.due() {
            return Ok(None);
        }
        let prediction = self.model.predict(&self.current_input())?;
        Ok(Some(StreamPrediction { sample_index: self.samples_seen, prediction }))
    }

    /// The model input the buffer currently maps to: standardized samples,
    /// oldest first, with zeros in front while the buffer is not yet full.
    pub fn current_input(&self) -> ModelInput {
        let s = self.model.standardizer;
        let pad = self.cfg.buffer_len - self.buffer.len();
        let pairs = std::iter::repeat_n((0.0, 0.0), pad).chain(self.buffer.iter().map(|&(p, q)| s.apply(p, q)));
        ModelInput::from_pairs(pairs, self.cfg.buffer_len).expect("buffer never exceeds its length")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayEvent {
    pub sequence: usize,
    pub sample_index: u64,
    pub probs: [f64; 3],
    pub label: Label,
}

/// Streams every sequence of `data` through a fresh predictor (reset between
/// sequences) and collects the predictions.
pub fn replay(model: Arc<Model>, cfg: StreamConfig, data: &Dataset) -> Result<Vec<ReplayEvent>, NnError> {
    let mut predictor = StreamPredictor::new(model, cfg)?;
    let mut events = Vec::new();
    for (i, seq) in data.sequences.iter().enumerate() {
        predictor.reset();
        for s in &seq.samples {
            if let Some(p) = predictor.push_sample(s.pitch, s.second)? {
                events.push(ReplayEvent {
                    sequence: i,
                    sample_index: p.sample_index,
                    probs: p.prediction.probs,
                    label: p.prediction.label,
                });
            }
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{CellKind, ModelConfig};
    use crate::preprocess::{prepare, Standardizer};
    use crate::seqdata::{EulerSample, GestureSequence};
    use proptest::prelude::*;

    fn model(time_steps: usize, s: Standardizer) -> Arc<Model> {
        let cfg = ModelConfig::new(CellKind::Gru, 4).with_time_steps(time_steps).with_seed(3);
        Arc::new(Model::init(cfg, s).unwrap())
    }

    fn sample(i: usize) -> (f64, f64) {
        ((i as f64 * 0.1).sin() * 0.3, (i as f64 * 0.07).cos() * 0.2)
    }

    fn emitted(p: &mut StreamPredictor, n: usize) -> Vec<u64> {
        (0..n)
            .filter_map(|i| {
                let (a, b) = sample(i);
                p.push_sample(a, b).unwrap().map(|e| e.sample_index)
            })
            .collect()
    }

    #[test]
    fn cadence_after_buffer_fills() {
        let mut p = StreamPredictor::new(model(240, Standardizer::IDENTITY), StreamConfig::default()).unwrap();
        assert_eq!(emitted(&mut p, 270), vec![240, 255, 270]);
        p.reset();
        assert!(emitted(&mut p, 239).is_empty());
        assert_eq!(p.samples_seen(), 239);
    }

    #[test]
    fn warm_start_pads_front() {
        let cfg = StreamConfig { buffer_len: 20, stride: 5, warm_start: true };
        let mut p = StreamPredictor::new(model(20, Standardizer::IDENTITY), cfg).unwrap();
        assert_eq!(emitted(&mut p, 12), vec![5, 10]);
        let input = p.current_input();
        assert!(input.values[..16].iter().all(|&v| v == 0.0));
        assert_eq!(input.values[16], sample(0).0);
        assert_eq!(input.values[39], sample(11).1);
    }

    #[test]
    fn reset_restarts_count() {
        let cfg = StreamConfig { buffer_len: 10, stride: 3, warm_start: false };
        let mut p = StreamPredictor::new(model(10, Standardizer::IDENTITY), cfg).unwrap();
        emitted(&mut p, 14);
        p.reset();
        assert_eq!(p.samples_seen(), 0);
        assert_eq!(emitted(&mut p, 13), vec![10, 13]);
    }

    #[test]
    fn rejects_bad_config_and_samples() {
        let m = model(10, Standardizer::IDENTITY);
        assert!(StreamPredictor::new(m.clone(), StreamConfig::default()).is_err());
        let cfg = StreamConfig { buffer_len: 10, stride: 0, warm_start: false };
        assert!(StreamPredictor::new(m.clone(), cfg).is_err());
        let mut p = StreamPredictor::new(m, StreamConfig { stride: 1, ..cfg }).unwrap();
        assert!(p.push_sample(f64::NAN, 0.0).is_err());
        assert_eq!(p.samples_seen(), 0);
    }

    #[test]
    fn matches_batch_prediction() {
        let s = Standardizer { mean: [0.01, -0.02], std: [0.2, 0.3] };
        let m = model(30, s);
        let mut p =
            StreamPredictor::new(m.clone(), StreamConfig { buffer_len: 30, stride: 4, warm_start: false }).unwrap();
        let stream: Vec<(f64, f64)> = (0..50).map(sample).collect();
        for (i, &(a, b)) in stream.iter().enumerate() {
            if let Some(e) = p.push_sample(a, b).unwrap() {
                let window = &stream[i + 1 - 30..=i];
                let seq = GestureSequence::new(
                    Label::Nod,
                    "x",
                    window.iter().map(|&(a, b)| EulerSample::planar(a, b)).collect(),
                );
                let batch = m.predict(&prepare(&seq, &s, 30).unwrap()).unwrap();
                assert_eq!(e.prediction.probs.map(f64::to_bits), batch.probs.map(f64::to_bits));
            }
        }
    }

    proptest! {
        #[test]
        fn buffer_is_last_window(n in 1usize..60, len in 1usize..12, stride in 1usize..5) {
            let cfg = StreamConfig { buffer_len: len, stride, warm_start: true };
            let mut p = StreamPredictor::new(model(len, Standardizer::IDENTITY), cfg).unwrap();
            let all: Vec<(f64, f64)> = (0..n).map(sample).collect();
            for &(a, b) in &all {
                p.push_sample(a, b).unwrap();
            }
            let tail = &all[n.saturating_sub(len)..];
            let got = p.current_input().unflatten();
            prop_assert_eq!(&got[len - tail.len()..], tail);
        }
    }
}
