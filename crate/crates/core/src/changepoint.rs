//! Exact penalized change-in-mean segmentation (PELT) and the gesture
//! bounds derived from it.
//!
//! The objective for change points `τ_1 < … < τ_k` is
//! `Σ segment_cost + penalty · k`, where the segment cost is the sum of
//! squared deviations from the segment mean.

use thiserror::Error;

use crate::seqdata::{GestureSequence, Label};

/// Longest signal [`exhaustive_segment`] accepts.
pub const ORACLE_MAX_LEN: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum ChangePointError {
    #[error("empty signal")]
    EmptySignal,
    #[error("empty segment [{0}, {1})")]
    EmptySegment(usize, usize),
    #[error("signal of length {0} exceeds the exhaustive search limit of {ORACLE_MAX_LEN}")]
    TooLongForOracle(usize),
    #[error("sequence of length {0} is too short; need at least 5 samples")]
    SequenceTooShort(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Delimits a gesture's active region: head `[0, start)`, tail `[end, len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChangePointBounds {
    pub start: usize,
    pub end: usize,
}

impl ChangePointBounds {
    /// The first/last-fifth rule.
    pub fn fifths(len: usize) -> Self {
        Self { start: len / 5, end: len - len / 5 }
    }

    pub fn is_valid_for(&self, len: usize) -> bool {
        self.start <= self.end && self.end <= len
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    /// `2 σ̂² ln L`, with σ̂ estimated from the median absolute first difference.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeltConfig {
    pub penalty: Penalty,
    pub min_segment_len: usize,
}

impl Default for PeltConfig {
    fn default() -> Self {
        Self { penalty: Penalty::Auto, min_segment_len: 2 }
    }
}

impl PeltConfig {
    pub fn fixed(penalty: f64) -> Self {
        Self { penalty: Penalty::Fixed(penalty), ..Self::default() }
    }

    fn validate(&self) -> Result<(), ChangePointError> {
        if self.min_segment_len == 0 {
            return Err(ChangePointError::InvalidConfig("min_segment_len must be positive".into()));
        }
        if let Penalty::Fixed(p) = self.penalty {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(ChangePointError::InvalidConfig(format!("penalty {p} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Resolves the penalty for a concrete signal.
    pub fn penalty_for(&self, signal: &[f64]) -> f64 {
        match self.penalty {
            Penalty::Fixed(p) => p,
            Penalty::Auto => auto_penalty(signal),
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// BIC-style penalty `2 σ̂² ln L`. First differences of Gaussian noise have
/// standard deviation `σ√2`, and the median of `|N(0, s)|` is `0.6745 s`.
pub fn auto_penalty(signal: &[f64]) -> f64 {
    if signal.len() < 2 {
        return 0.0;
    }
    let diffs = signal.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let sigma = median(diffs) / (0.674_489_750_196_081_7 * std::f64::consts::SQRT_2);
    2.0 * sigma * sigma * (signal.len() as f64).ln()
}

/// Sum of squared deviations from the mean over `signal[a..b]`.
pub fn segment_cost(signal: &[f64], a: usize, b: usize) -> Result<f64, ChangePointError> {
    if a >= b || b > signal.len() {
        return Err(ChangePointError::EmptySegment(a, b));
    }
    let seg = &signal[a..b];
    let mean = seg.iter().sum::<f64>() / seg.len() as f64;
    Ok(seg.iter().map(|x| (x - mean) * (x - mean)).sum())
}

/// O(1) segment costs from prefix sums of the mean-shifted signal.
pub struct CostTable {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl CostTable {
    pub fn new(signal: &[f64]) -> Self {
        let shift = if signal.is_empty() { 0.0 } else { signal.iter().sum::<f64>() / signal.len() as f64 };
        let mut sum = Vec::with_capacity(signal.len() + 1);
        let mut sum_sq = Vec::with_capacity(signal.len() + 1);
        let (mut s, mut q) = (0.0, 0.0);
        sum.push(s);
        sum_sq.push(q);
        for &x in signal {
            let d = x - shift;
            s += d;
            q += d * d;
            sum.push(s);
            sum_sq.push(q);
        }
        Self { sum, sum_sq }
    }

    /// Cost of `[a, b)`; requires `a < b`.
    pub fn cost(&self, a: usize, b: usize) -> f64 {
        let n = (b - a) as f64;
        let s = self.sum[b] - self.sum[a];
        let q = self.sum_sq[b] - self.sum_sq[a];
        (q - s * s / n).max(0.0)
    }
}

/// Penalized objective of a change-point list, accumulated left to right
/// exactly as the dynamic program does, so equal lists give equal bits.
pub fn objective(signal: &[f64], change_points: &[usize], penalty: f64) -> f64 {
    let table = CostTable::new(signal);
    let mut f = -penalty;
    let mut start = 0;
    for &end in change_points.iter().chain(std::iter::once(&signal.len())) {
        f = f + table.cost(start, end) + penalty;
        start = end;
    }
    f
}

/// Prefers the lower objective, then fewer change points, then the
/// lexicographically smaller list.
fn better(val: f64, path: &[usize], best_val: f64, best_path: &[usize]) -> bool {
    if val != best_val {
        return val < best_val;
    }
    (path.len(), path) < (best_path.len(), best_path)
}

/// PELT: the exact minimizer of the penalized change-in-mean objective.
/// Returned indices are strictly increasing; each starts a new segment.
pub fn pelt(signal: &[f64], cfg: &PeltConfig) -> Result<Vec<usize>, ChangePointError> {
    cfg.validate()?;
    if signal.is_empty() {
        return Err(ChangePointError::EmptySignal);
    }
    let n = signal.len();
    let m = cfg.min_segment_len;
    if n < 2 * m {
        return Ok(Vec::new());
    }
    let penalty = cfg.penalty_for(signal);
    let table = CostTable::new(signal);

    // f[t]: optimal objective of signal[..t]; path[t]: its change points.
    let mut f = vec![f64::INFINITY; n + 1];
    let mut path: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    f[0] = -penalty;
    // (τ, first end at which τ is no longer considered)
    let mut candidates: Vec<(usize, usize)> = vec![(0, usize::MAX)];

    for t in m..=n {
        // τ becomes admissible once the segment [τ, t) reaches the minimum length
        if t >= 2 * m {
            candidates.push((t - m, usize::MAX));
        }
        candidates.retain(|&(_, dead_from)| dead_from > t);
        let extend = |tau: usize| {
            let mut p = path[tau].clone();
            if tau > 0 {
                p.push(tau);
            }
            p
        };
        let mut best_val = f64::INFINITY;
        let mut best_tau = usize::MAX;
        let mut partial = Vec::with_capacity(candidates.len());
        for &(tau, _) in &candidates {
            let fc = f[tau] + table.cost(tau, t);
            partial.push(fc);
            let val = fc + penalty;
            let wins =
                if val == best_val { better(val, &extend(tau), best_val, &extend(best_tau)) } else { val < best_val };
            if wins {
                best_val = val;
                best_tau = tau;
            }
        }
        f[t] = best_val;
        path[t] = extend(best_tau);

        // Pruning: τ is dominated once F(τ) + C(τ, t) > F(t), but only for
        // ends s >= t + m, where t itself can close the last segment. The
        // slack absorbs rounding in the prefix-sum costs; keeping a
        // candidate longer never changes the optimum.
        let slack = 1e-9 * (1.0 + best_val.abs());
        for (cand, fc) in candidates.iter_mut().zip(partial) {
            if fc > best_val + slack && cand.1 == usize::MAX {
                cand.1 = t + m;
            }
        }
    }
    Ok(std::mem::take(&mut path[n]))
}

/// Brute-force global minimizer over every admissible segmentation; the
/// test oracle for [`pelt`]. Same tie-break rule.
pub fn exhaustive_segment(signal: &[f64], cfg: &PeltConfig) -> Result<Vec<usize>, ChangePointError> {
    cfg.validate()?;
    if signal.is_empty() {
        return Err(ChangePointError::EmptySignal);
    }
    if signal.len() > ORACLE_MAX_LEN {
        return Err(ChangePointError::TooLongForOracle(signal.len()));
    }
    let n = signal.len();
    let m = cfg.min_segment_len;
    if n < 2 * m {
        return Ok(Vec::new());
    }
    let penalty = cfg.penalty_for(signal);

    struct Search<'a> {
        table: CostTable,
        n: usize,
        _signal: &'a [f64],
        m: usize,
        penalty: f64,
        best: (f64, Vec<usize>),
        current: Vec<usize>,
    }

    impl Search<'_> {
        fn run(&mut self, start: usize, acc: f64) {
            let n = self.n;
            // close the final segment here
            let total = acc + self.table.cost(start, n) + self.penalty;
            if better(total, &self.current, self.best.0, &self.best.1) {
                self.best = (total, self.current.clone());
            }
            for next in start + self.m..=n.saturating_sub(self.m) {
                let acc_next = acc + self.table.cost(start, next) + self.penalty;
                self.current.push(next);
                self.run(next, acc_next);
                self.current.pop();
            }
        }
    }

    let mut search = Search {
        table: CostTable::new(signal),
        n,
        _signal: signal,
        m,
        penalty,
        best: (f64::INFINITY, Vec::new()),
        current: Vec::new(),
    };
    search.run(0, -penalty);
    Ok(search.best.1)
}

/// 1-D signal PELT runs on: per-sample Euclidean norm of the mean-centred
/// (pitch, second) pair.
pub fn detection_signal(seq: &GestureSequence) -> Vec<f64> {
    let n = seq.len().max(1) as f64;
    let mp = seq.samples.iter().map(|s| s.pitch).sum::<f64>() / n;
    let ms = seq.samples.iter().map(|s| s.second).sum::<f64>() / n;
    seq.samples.iter().map(|s| (s.pitch - mp).hypot(s.second - ms)).collect()
}

/// Head/tail bounds of a gesture. Nod and shake use the first and last PELT
/// change point of the detection signal, falling back to the fifths rule
/// when there are none; "other" always uses the fifths rule.
pub fn gesture_bounds(seq: &GestureSequence, cfg: &PeltConfig) -> Result<ChangePointBounds, ChangePointError> {
    let len = seq.len();
    if len < 5 {
        return Err(ChangePointError::SequenceTooShort(len));
    }
    if seq.label == Label::Other {
        return Ok(ChangePointBounds::fifths(len));
    }
    let cps = pelt(&detection_signal(seq), cfg)?;
    Ok(match (cps.first(), cps.last()) {
        (Some(&start), Some(&end)) => ChangePointBounds { start, end },
        _ => ChangePointBounds::fifths(len),
    })
}
