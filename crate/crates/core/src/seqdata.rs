//! Gesture sequences, the JSON Lines dataset format, filtering, stratified
//! splitting, and a synthetic nod/shake/other generator.
//!
//! Dataset files hold one object per line:
//!
//! ```text
//! {"label":"nod","user":"u1","rate_hz":60,"samples":[[pitch,second,third],...]}
//! ```
//!
//! Angles are radians. `samples` entries are either all 3-element or all
//! 2-element (after the third channel has been dropped) within one file.

use std::f64::consts::PI;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sampling rate of every sequence, in Hz.
pub const RATE_HZ: u32 = 60;
/// Longest raw sequence, and the padded model input length in samples.
pub const MAX_LEN: usize = 240;
/// Sequences shorter than this are dropped before splitting.
pub const MIN_LEN: usize = 50;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: sample {index} has a non-finite angle")]
    NonFinite { line: usize, index: usize },
    #[error("line {line}: sample {index} has an angle outside [-pi, pi]")]
    OutOfRange { line: usize, index: usize },
    #[error("line {line}: {detail}")]
    Shape { line: usize, detail: String },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("invalid split fraction {0}; expected 0 < frac < 1")]
    InvalidFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Nod,
    Shake,
    Other,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Nod, Label::Shake, Label::Other];

    /// Class index used by the classifier (nod 0, shake 1, other 2).
    pub fn index(self) -> usize {
        match self {
            Label::Nod => 0,
            Label::Shake => 1,
            Label::Other => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Nod => "nod",
            Label::Shake => "shake",
            Label::Other => "other",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nod" => Ok(Label::Nod),
            "shake" => Ok(Label::Shake),
            "other" => Ok(Label::Other),
            _ => Err(s.to_string()),
        }
    }
}

/// One head-pose reading. `third` is `None` once the third channel is dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerSample {
    pub pitch: f64,
    pub second: f64,
    pub third: Option<f64>,
}

impl EulerSample {
    pub fn new(pitch: f64, second: f64, third: f64) -> Self {
        Self { pitch, second, third: Some(third) }
    }

    pub fn planar(pitch: f64, second: f64) -> Self {
        Self { pitch, second, third: None }
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        [self.pitch, self.second].into_iter().chain(self.third)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GestureSequence {
    pub label: Label,
    pub user_id: String,
    pub rate_hz: u32,
    pub samples: Vec<EulerSample>,
}

impl GestureSequence {
    pub fn new(label: Label, user_id: impl Into<String>, samples: Vec<EulerSample>) -> Self {
        Self { label, user_id: user_id.into(), rate_hz: RATE_HZ, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of channels carried (2 or 3); `None` for an empty sequence.
    pub fn channels(&self) -> Option<usize> {
        self.samples.first().map(|s| if s.third.is_some() { 3 } else { 2 })
    }

    pub fn pitch(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.pitch).collect()
    }

    pub fn second(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.second).collect()
    }

    pub fn third(&self) -> Option<Vec<f64>> {
        self.samples.iter().map(|s| s.third).collect()
    }

    /// Rebuilds a sequence with the same metadata from per-channel columns.
    pub fn with_channels(&self, pitch: &[f64], second: &[f64], third: Option<&[f64]>) -> Self {
        let samples = match third {
            Some(third) => {
                pitch.iter().zip(second).zip(third).map(|((&p, &s), &t)| EulerSample::new(p, s, t)).collect()
            }
            None => pitch.iter().zip(second).map(|(&p, &s)| EulerSample::planar(p, s)).collect(),
        };
        Self { samples, ..self.clone() }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<GestureSequence>,
}

impl Dataset {
    pub fn new(sequences: Vec<GestureSequence>) -> Self {
        Self { sequences }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Per-class sequence counts in `Label::index` order.
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for s in &self.sequences {
            counts[s.label.index()] += 1;
        }
        counts
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    label: String,
    user: String,
    rate_hz: u32,
    samples: Vec<Vec<f64>>,
}

fn parse_line(line_no: usize, text: &str) -> Result<GestureSequence, DatasetError> {
    let rec: Record =
        serde_json::from_str(text).map_err(|e| DatasetError::Parse { line: line_no, detail: e.to_string() })?;
    let label = rec.label.parse::<Label>().map_err(|label| DatasetError::UnknownLabel { line: line_no, label })?;
    if rec.rate_hz != RATE_HZ {
        return Err(DatasetError::Shape {
            line: line_no,
            detail: format!("rate_hz {} unsupported; expected {RATE_HZ}", rec.rate_hz),
        });
    }
    let width = rec.samples.first().map_or(3, Vec::len);
    let mut samples = Vec::with_capacity(rec.samples.len());
    for (index, row) in rec.samples.iter().enumerate() {
        if row.len() != width || !(width == 2 || width == 3) {
            return Err(DatasetError::Shape {
                line: line_no,
                detail: format!("sample {index} has {} channels; expected 2 or 3, uniform", row.len()),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::NonFinite { line: line_no, index });
        }
        if row.iter().any(|v| v.abs() > PI) {
            return Err(DatasetError::OutOfRange { line: line_no, index });
        }
        samples.push(EulerSample { pitch: row[0], second: row[1], third: row.get(2).copied() });
    }
    Ok(GestureSequence { label, user_id: rec.user, rate_hz: rec.rate_hz, samples })
}

/// Parses a dataset from JSON Lines text. Blank lines are skipped.
pub fn parse_dataset(text: &str) -> Result<Dataset, DatasetError> {
    let mut sequences = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let seq = parse_line(i + 1, line)?;
        if let Some(c) = seq.channels() {
            match width {
                None => width = Some(c),
                Some(w) if w != c => {
                    return Err(DatasetError::Shape {
                        line: i + 1,
                        detail: format!("{c}-channel samples in a {w}-channel file"),
                    })
                }
                Some(_) => {}
            }
        }
        sequences.push(seq);
    }
    Ok(Dataset { sequences })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io { path: path.display().to_string(), source };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut text = String::new();
    for line in reader.lines() {
        text.push_str(&line.map_err(io_err)?);
        text.push('\n');
    }
    parse_dataset(&text)
}

fn to_line(seq: &GestureSequence) -> String {
    let rec = Record {
        label: seq.label.as_str().to_string(),
        user: seq.user_id.clone(),
        rate_hz: seq.rate_hz,
        samples: seq.samples.iter().map(|s| s.values().collect()).collect(),
    };
    serde_json::to_string(&rec).expect("dataset records always serialize")
}

pub fn write_dataset(d: &Dataset, mut out: impl Write) -> std::io::Result<()> {
    for seq in &d.sequences {
        writeln!(out, "{}", to_line(seq))?;
    }
    out.flush()
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(io_err)?;
    write_dataset(d, BufWriter::new(file)).map_err(io_err)
}

/// Keeps sequences with at least `min_len` samples, preserving order.
pub fn filter_short(d: &Dataset, min_len: usize) -> Dataset {
    Dataset::new(d.sequences.iter().filter(|s| s.len() >= min_len).cloned().collect())
}

/// Stratified split: per class, `round(count * test_frac)` sequences go to the
/// test side. Both sides keep the input order.
pub fn split(d: &Dataset, test_frac: f64, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(DatasetError::InvalidFraction(test_frac));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; d.len()];
    for label in Label::ALL {
        let mut idx: Vec<usize> = (0..d.len()).filter(|&i| d.sequences[i].label == label).collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_frac).round() as usize;
        for &i in &idx[..n_test] {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<_>, Vec<_>) = d.sequences.iter().cloned().zip(is_test).partition(|(_, t)| *t);
    Ok((
        Dataset::new(train.into_iter().map(|(s, _)| s).collect()),
        Dataset::new(test.into_iter().map(|(s, _)| s).collect()),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub per_class_count: usize,
    /// Inclusive sequence length range in samples.
    pub length_range: (usize, usize),
    pub nod_amplitude_range: (f64, f64),
    pub shake_amplitude_range: (f64, f64),
    /// Oscillation rate of the nod/shake burst, Hz.
    pub gesture_freq_range: (f64, f64),
    pub noise_std: f64,
    /// Per-sample step of the random walk used for "other".
    pub other_walk_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            per_class_count: 300,
            length_range: (MIN_LEN, MAX_LEN),
            nod_amplitude_range: (0.12, 0.35),
            shake_amplitude_range: (0.15, 0.45),
            gesture_freq_range: (1.0, 3.0),
            noise_std: 0.01,
            other_walk_std: 0.006,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidConfig(m.to_string()));
        let (lo, hi) = self.length_range;
        if self.per_class_count == 0 {
            return bad("per_class_count must be positive");
        }
        if lo < MIN_LEN || hi > MAX_LEN || lo > hi {
            return bad("length_range must lie within [50, 240]");
        }
        for (name, (a, b)) in [
            ("nod_amplitude_range", self.nod_amplitude_range),
            ("shake_amplitude_range", self.shake_amplitude_range),
            ("gesture_freq_range", self.gesture_freq_range),
        ] {
            if !(a > 0.0 && a <= b && b.is_finite()) {
                return Err(DatasetError::InvalidConfig(format!("{name} must be positive and ordered")));
            }
        }
        if self.nod_amplitude_range.1 + 4.0 * self.noise_std >= 1.0
            || self.shake_amplitude_range.1 + 4.0 * self.noise_std >= 1.0
        {
            return bad("amplitudes must stay well inside [-pi, pi]");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be >= 0");
        }
        if !(self.other_walk_std >= 0.0 && self.other_walk_std.is_finite()) {
            return bad("other_walk_std must be >= 0");
        }
        Ok(())
    }
}

/// Where a synthetic gesture burst sits: samples `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveRegion {
    pub start: usize,
    pub end: usize,
}

/// A sinusoidal burst over `region`, quiet elsewhere.
pub fn burst(len: usize, region: ActiveRegion, amplitude: f64, freq_hz: f64) -> Vec<f64> {
    (0..len)
        .map(|i| {
            if i >= region.start && i < region.end {
                let t = (i - region.start) as f64 / RATE_HZ as f64;
                amplitude * (2.0 * PI * freq_hz * t).sin()
            } else {
                0.0
            }
        })
        .collect()
}

fn noise(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; len];
    }
    let normal = Normal::new(0.0, std).expect("validated std");
    (0..len).map(|_| normal.sample(rng)).collect()
}

fn random_walk(rng: &mut ChaCha8Rng, len: usize, step_std: f64) -> Vec<f64> {
    let steps = noise(rng, len, step_std);
    steps
        .iter()
        .scan(0.0, |acc, s| {
            *acc = (*acc + s).clamp(-0.5, 0.5);
            Some(*acc)
        })
        .collect()
}

fn sample_range(rng: &mut ChaCha8Rng, (a, b): (f64, f64)) -> f64 {
    if a == b {
        a
    } else {
        rng.random_range(a..b)
    }
}

/// Draws the active region for a sequence of `len` samples: the burst covers
/// 60-80% of the sequence and leaves at least a tenth quiet on either side.
fn active_region(rng: &mut ChaCha8Rng, len: usize) -> ActiveRegion {
    let burst_len = ((len as f64) * rng.random_range(0.6..0.8)).round() as usize;
    let margin = len.div_ceil(10);
    let slack = len.saturating_sub(burst_len + 2 * margin);
    let start = margin + rng.random_range(0..=slack);
    ActiveRegion { start, end: start + burst_len }
}

/// Builds one labelled synthetic sequence and returns the burst placement
/// (`None` for "other").
pub fn synth_sequence(
    cfg: &SynthConfig,
    label: Label,
    rng: &mut ChaCha8Rng,
    user: &str,
) -> (GestureSequence, Option<ActiveRegion>) {
    let len = rng.random_range(cfg.length_range.0..=cfg.length_range.1);
    let (mut pitch, mut second, region) = match label {
        Label::Nod | Label::Shake => {
            let region = active_region(rng, len);
            let amp_range = if label == Label::Nod { cfg.nod_amplitude_range } else { cfg.shake_amplitude_range };
            let amp = sample_range(rng, amp_range) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            // at least one full oscillation inside the burst
            let min_freq = RATE_HZ as f64 / (region.end - region.start) as f64;
            let freq = sample_range(rng, cfg.gesture_freq_range).max(min_freq);
            let wave = burst(len, region, amp, freq);
            if label == Label::Nod {
                (wave, vec![0.0; len], Some(region))
            } else {
                (vec![0.0; len], wave, Some(region))
            }
        }
        Label::Other => {
            let p = random_walk(rng, len, cfg.other_walk_std);
            let s = random_walk(rng, len, cfg.other_walk_std);
            (p, s, None)
        }
    };
    let third = noise(rng, len, cfg.noise_std);
    for (v, n) in pitch.iter_mut().zip(noise(rng, len, cfg.noise_std)) {
        *v += n;
    }
    for (v, n) in second.iter_mut().zip(noise(rng, len, cfg.noise_std)) {
        *v += n;
    }
    let samples = (0..len).map(|i| EulerSample::new(pitch[i], second[i], third[i])).collect();
    (GestureSequence::new(label, user, samples), region)
}

/// Synthetic stand-in for recorded gesture data, deterministic in `cfg.seed`.
/// Classes are interleaved nod, shake, other.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset, DatasetError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sequences = Vec::with_capacity(cfg.per_class_count * 3);
    for i in 0..cfg.per_class_count {
        for label in Label::ALL {
            let user = format!("synth-{}", i % 6);
            sequences.push(synth_sequence(cfg, label, &mut rng, &user).0);
        }
    }
    Ok(Dataset::new(sequences))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(label: Label, len: usize) -> GestureSequence {
        let samples = (0..len).map(|i| EulerSample::new(i as f64 * 0.001, -0.1, 0.2)).collect();
        GestureSequence::new(label, "u", samples)
    }

    fn lens(d: &Dataset) -> Vec<usize> {
        d.sequences.iter().map(GestureSequence::len).collect()
    }

    #[test]
    fn parses_two_lines() {
        let text = concat!(
            r#"{"label":"nod","user":"a","rate_hz":60,"samples":[[0.1,0.2,0.3],[0.0,0.0,0.0]]}"#,
            "\n",
            r#"{"label":"other","user":"b","rate_hz":60,"samples":[]}"#,
            "\n"
        );
        let d = parse_dataset(text).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.sequences[0].label, Label::Nod);
        assert_eq!(d.sequences[0].samples[0], EulerSample::new(0.1, 0.2, 0.3));
        assert_eq!(d.sequences[1].user_id, "b");
    }

    #[test]
    fn empty_text_is_empty_dataset() {
        assert!(parse_dataset("").unwrap().is_empty());
    }

    #[test]
    fn unknown_label_names_line() {
        let text = concat!(
            r#"{"label":"nod","user":"a","rate_hz":60,"samples":[]}"#,
            "\n",
            r#"{"label":"wave","user":"a","rate_hz":60,"samples":[]}"#
        );
        let err = parse_dataset(text).unwrap_err();
        assert!(matches!(&err, DatasetError::UnknownLabel { line: 2, label } if label == "wave"));
        assert!(err.to_string().contains("wave"));
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn rejects_bad_lines() {
        let garbled = parse_dataset("{not json").unwrap_err();
        assert!(matches!(garbled, DatasetError::Parse { line: 1, .. }));
        let big = r#"{"label":"nod","user":"a","rate_hz":60,"samples":[[0.0,4.0,0.0]]}"#;
        assert!(matches!(parse_dataset(big).unwrap_err(), DatasetError::OutOfRange { .. }));
        let ragged = r#"{"label":"nod","user":"a","rate_hz":60,"samples":[[0.0,0.1,0.0],[0.0,0.1]]}"#;
        assert!(matches!(parse_dataset(ragged).unwrap_err(), DatasetError::Shape { .. }));
        let mixed = concat!(
            r#"{"label":"nod","user":"a","rate_hz":60,"samples":[[0.0,0.1,0.0]]}"#,
            "\n",
            r#"{"label":"nod","user":"a","rate_hz":60,"samples":[[0.0,0.1]]}"#
        );
        assert!(matches!(parse_dataset(mixed).unwrap_err(), DatasetError::Shape { line: 2, .. }));
    }

    #[test]
    fn non_finite_rejected() {
        // JSON has no NaN literal; a huge exponent overflows to infinity
        let text = r#"{"label":"nod","user":"a","rate_hz":60,"samples":[[1e999,0.0,0.0]]}"#;
        let err = parse_dataset(text).unwrap_err();
        assert!(matches!(err, DatasetError::NonFinite { .. } | DatasetError::Parse { .. }), "{err}");
    }

    #[test]
    fn filter_short_examples() {
        let d = Dataset::new(vec![seq(Label::Nod, 49), seq(Label::Nod, 50), seq(Label::Shake, 240)]);
        assert_eq!(lens(&filter_short(&d, MIN_LEN)), vec![50, 240]);
        let long = Dataset::new(vec![seq(Label::Nod, 60), seq(Label::Other, 70)]);
        assert_eq!(filter_short(&long, MIN_LEN), long);
        let short = Dataset::new(vec![seq(Label::Nod, 10), seq(Label::Other, 49)]);
        assert!(filter_short(&short, MIN_LEN).is_empty());
    }

    #[test]
    fn split_reproduces_table_totals() {
        let mut seqs = Vec::new();
        for (label, n) in [(Label::Nod, 187), (Label::Shake, 163), (Label::Other, 186)] {
            seqs.extend((0..n).map(|_| seq(label, 60)));
        }
        let (train, test) = split(&Dataset::new(seqs), 0.10, 1).unwrap();
        assert_eq!((train.len(), test.len()), (482, 54));
    }

    #[test]
    fn split_single_class_and_determinism() {
        let d = Dataset::new((0..10).map(|i| seq(Label::Shake, 50 + i)).collect());
        let (train, test) = split(&d, 0.1, 9).unwrap();
        assert_eq!((train.len(), test.len()), (9, 1));
        assert_eq!(split(&d, 0.1, 9).unwrap(), (train, test));
        assert!(split(&d, 0.0, 9).is_err());
        assert!(split(&d, 1.0, 9).is_err());
    }

    #[test]
    fn synth_counts_and_determinism() {
        let cfg = SynthConfig { per_class_count: 300, seed: 42, ..Default::default() };
        let d = synth_dataset(&cfg).unwrap();
        assert_eq!(d.len(), 900);
        assert_eq!(d.class_counts(), [300, 300, 300]);
        assert!(d.sequences.iter().all(|s| (50..=240).contains(&s.len())));
        assert_eq!(synth_dataset(&cfg).unwrap(), d);
    }

    #[test]
    fn noiseless_nod_has_flat_second_channel() {
        let cfg = SynthConfig { noise_std: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (s, region) = synth_sequence(&cfg, Label::Nod, &mut rng, "u");
        let region = region.unwrap();
        assert!(s.second().iter().all(|&v| v == 0.0));
        let pitch = s.pitch();
        assert!(pitch[region.start..region.end].iter().any(|v| v.abs() > 0.1));
        assert!(pitch[..region.start].iter().chain(&pitch[region.end..]).all(|&v| v == 0.0));
    }

    #[test]
    fn synth_rejects_bad_config() {
        let cfg = SynthConfig { length_range: (10, 240), ..Default::default() };
        assert!(synth_dataset(&cfg).is_err());
        let cfg = SynthConfig { noise_std: -1.0, ..Default::default() };
        assert!(synth_dataset(&cfg).is_err());
        let cfg = SynthConfig { nod_amplitude_range: (0.0, 0.1), ..Default::default() };
        assert!(synth_dataset(&cfg).is_err());
    }

    fn variance(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    }

    fn arb_sequence() -> impl Strategy<Value = GestureSequence> {
        (0usize..3, 0usize..12, any::<bool>()).prop_flat_map(|(label, len, three)| {
            proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), len).prop_map(move |rows| {
                let samples = rows
                    .into_iter()
                    .map(|(a, b, c)| if three { EulerSample::new(a, b, c) } else { EulerSample::planar(a, b) })
                    .collect();
                GestureSequence::new(Label::from_index(label).unwrap(), "p", samples)
            })
        })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(seqs in proptest::collection::vec(arb_sequence(), 0..8), three in any::<bool>()) {
            // one file carries a single channel width
            let seqs: Vec<_> = seqs
                .into_iter()
                .map(|s| {
                    let samples = s.samples.iter().map(|e| EulerSample { third: if three { Some(e.third.unwrap_or(0.5)) } else { None }, ..*e }).collect();
                    GestureSequence { samples, ..s }
                })
                .collect();
            let d = Dataset::new(seqs);
            let mut buf = Vec::new();
            write_dataset(&d, &mut buf).unwrap();
            let back = parse_dataset(std::str::from_utf8(&buf).unwrap()).unwrap();
            prop_assert_eq!(back, d);
        }

        #[test]
        fn split_is_partition(n in 1usize..1000, seed in any::<u64>(), frac in 0.01f64..0.99) {
            let d = Dataset::new(
                (0..n)
                    .map(|i| GestureSequence::new(Label::from_index(i % 3).unwrap(), i.to_string(), vec![]))
                    .collect(),
            );
            let (train, test) = split(&d, frac, seed).unwrap();
            let mut ids: Vec<usize> = train.sequences.iter().chain(&test.sequences)
                .map(|s| s.user_id.parse().unwrap()).collect();
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn filter_is_idempotent(lens in proptest::collection::vec(0usize..120, 0..40)) {
            let d = Dataset::new(lens.iter().map(|&l| seq(Label::Other, l)).collect());
            let once = filter_short(&d, MIN_LEN);
            prop_assert_eq!(filter_short(&once, MIN_LEN), once);
        }

        #[test]
        fn nod_burst_dominates_variance(seed in any::<u64>()) {
            let cfg = SynthConfig { nod_amplitude_range: (0.2, 0.3), noise_std: 0.02, ..Default::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (s, region) = synth_sequence(&cfg, Label::Nod, &mut rng, "u");
            let region = region.unwrap();
            let pitch = s.pitch();
            let inside = variance(&pitch[region.start..region.end]);
            let outside: Vec<f64> = pitch[..region.start].iter().chain(&pitch[region.end..]).copied().collect();
            prop_assert!(inside >= 4.0 * variance(&outside));
        }
    }
}
