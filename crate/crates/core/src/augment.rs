//! Time-warp augmentation: whole-sequence resampling in fixed steps, and
//! head/tail resampling around the gesture's change-point bounds.

use rayon::prelude::*;
use thiserror::Error;

use crate::changepoint::{gesture_bounds, ChangePointBounds, ChangePointError, PeltConfig};
use crate::seqdata::{Dataset, GestureSequence, MAX_LEN};

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("cannot resample an empty channel")]
    EmptySource,
    #[error("invalid target length {target}; expected 1..={max}")]
    InvalidTarget { target: usize, max: usize },
    #[error(transparent)]
    Bounds(#[from] ChangePointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentConfig {
    /// Whole-sequence step.
    pub delta_alpha: usize,
    /// Head/tail step magnitude.
    pub delta_beta: usize,
    pub max_len: usize,
    pub min_len: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { delta_alpha: 30, delta_beta: 4, max_len: MAX_LEN, min_len: 1 }
    }
}

/// Endpoint-preserving linear interpolation onto `target_len` uniformly
/// spaced positions `i (L-1)/(T-1)`.
pub fn resample_linear(channel: &[f64], target_len: usize) -> Result<Vec<f64>, AugmentError> {
    let len = channel.len();
    if len == 0 {
        return Err(AugmentError::EmptySource);
    }
    if target_len == 0 {
        return Err(AugmentError::InvalidTarget { target: 0, max: usize::MAX });
    }
    if target_len == len {
        return Ok(channel.to_vec());
    }
    if target_len == 1 {
        return Ok(vec![channel[0]]);
    }
    let denom = target_len - 1;
    Ok((0..target_len)
        .map(|i| {
            // integer position arithmetic keeps both endpoints exact
            let num = i * (len - 1);
            let lo = num / denom;
            let rem = num % denom;
            if rem == 0 {
                return channel[lo];
            }
            let (a, b) = (channel[lo], channel[lo + 1]);
            let v = a + (rem as f64 / denom as f64) * (b - a);
            v.clamp(a.min(b), a.max(b))
        })
        .collect())
}

fn resample_sequence(seq: &GestureSequence, target_len: usize) -> Result<GestureSequence, AugmentError> {
    let pitch = resample_linear(&seq.pitch(), target_len)?;
    let second = resample_linear(&seq.second(), target_len)?;
    let third = seq.third().map(|t| resample_linear(&t, target_len)).transpose()?;
    Ok(seq.with_channels(&pitch, &second, third.as_deref()))
}

/// Shrink targets `L - kΔα` (descending, while `>= min_len`), then stretch
/// targets `L + kΔα` (ascending, while `<= max_len`).
pub fn full_warp_targets(source_len: usize, cfg: &AugmentConfig) -> Vec<usize> {
    let step = cfg.delta_alpha;
    let shrink = (1..)
        .map(|k| source_len.checked_sub(k * step))
        .take_while(|t| t.is_some_and(|t| t >= cfg.min_len.max(1)))
        .flatten();
    let stretch = (1..).map(|k| source_len + k * step).take_while(|&t| t <= cfg.max_len);
    shrink.chain(stretch).collect()
}

pub fn warp_full(
    seq: &GestureSequence,
    target_len: usize,
    cfg: &AugmentConfig,
) -> Result<GestureSequence, AugmentError> {
    if target_len < cfg.min_len.max(1) || target_len > cfg.max_len {
        return Err(AugmentError::InvalidTarget { target: target_len, max: cfg.max_len });
    }
    resample_sequence(seq, target_len)
}

/// New lengths for a warped interval of `q` samples inside a sequence of
/// `len`: shrink by Δβ until the interval would be empty, grow by Δβ until
/// it would reach 240 samples or the whole sequence would exceed `max_len`.
pub fn interval_targets(q: usize, len: usize, cfg: &AugmentConfig) -> Vec<usize> {
    if q == 0 {
        return Vec::new();
    }
    let step = cfg.delta_beta;
    let rest = len - q;
    let down = (1..).map(|k| q.checked_sub(k * step)).take_while(|t| t.is_some_and(|t| t > 0)).flatten();
    let up = (1..).map(|k| q + k * step).take_while(|&t| t < MAX_LEN && rest + t <= cfg.max_len);
    down.chain(up).collect()
}

/// Head and tail target lengths for a sequence of `len` with `bounds`.
pub fn head_tail_targets(len: usize, bounds: ChangePointBounds, cfg: &AugmentConfig) -> (Vec<usize>, Vec<usize>) {
    (interval_targets(bounds.start, len, cfg), interval_targets(len - bounds.end, len, cfg))
}

/// Head family `warp(Q^h) ⊕ R^h` followed by tail family `R^t ⊕ warp(Q^t)`.
pub fn head_tail_variants(
    seq: &GestureSequence,
    bounds: ChangePointBounds,
    cfg: &AugmentConfig,
) -> Result<Vec<GestureSequence>, AugmentError> {
    let len = seq.len();
    if !bounds.is_valid_for(len) {
        return Ok(Vec::new());
    }
    let (head_targets, tail_targets) = head_tail_targets(len, bounds, cfg);
    let mut out = Vec::with_capacity(head_targets.len() + tail_targets.len());

    let head = GestureSequence { samples: seq.samples[..bounds.start].to_vec(), ..seq.clone() };
    for t in head_targets {
        let mut warped = resample_sequence(&head, t)?;
        warped.samples.extend_from_slice(&seq.samples[bounds.start..]);
        out.push(warped);
    }
    let tail = GestureSequence { samples: seq.samples[bounds.end..].to_vec(), ..seq.clone() };
    for t in tail_targets {
        let warped = resample_sequence(&tail, t)?;
        let mut samples = seq.samples[..bounds.end].to_vec();
        samples.extend(warped.samples);
        out.push(GestureSequence { samples, ..seq.clone() });
    }
    Ok(out)
}

/// All variants of one sequence: full warps, then head/tail variants.
pub fn augment_sequence(
    seq: &GestureSequence,
    cfg: &AugmentConfig,
    pelt_cfg: &PeltConfig,
) -> Result<Vec<GestureSequence>, AugmentError> {
    let mut out =
        full_warp_targets(seq.len(), cfg).into_iter().map(|t| warp_full(seq, t, cfg)).collect::<Result<Vec<_>, _>>()?;
    let bounds = gesture_bounds(seq, pelt_cfg)?;
    out.extend(head_tail_variants(seq, bounds, cfg)?);
    Ok(out)
}

/// Each original followed by its variants, in input order.
pub fn augment_dataset(d: &Dataset, cfg: &AugmentConfig, pelt_cfg: &PeltConfig) -> Result<Dataset, AugmentError> {
    let groups = d
        .sequences
        .par_iter()
        .map(|seq| {
            let mut group = vec![seq.clone()];
            group.extend(augment_sequence(seq, cfg, pelt_cfg)?);
            Ok(group)
        })
        .collect::<Result<Vec<_>, AugmentError>>()?;
    Ok(Dataset::new(groups.into_iter().flatten().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqdata::{EulerSample, Label};
    use proptest::prelude::*;

    fn ramp(label: Label, len: usize) -> GestureSequence {
        let samples = (0..len).map(|i| EulerSample::new(i as f64 * 0.01, -(i as f64) * 0.002, 0.5)).collect();
        GestureSequence::new(label, "u", samples)
    }

    #[test]
    fn resample_examples() {
        assert_eq!(resample_linear(&[1.0, 2.0, 3.0], 3).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(resample_linear(&[0.0, 3.0], 4).unwrap(), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(resample_linear(&[0.0, 1.0, 2.0, 3.0], 2).unwrap(), vec![0.0, 3.0]);
        assert_eq!(resample_linear(&[7.0, 1.0], 1).unwrap(), vec![7.0]);
        assert_eq!(resample_linear(&[], 3), Err(AugmentError::EmptySource));
        assert!(resample_linear(&[1.0], 0).is_err());
    }

    #[test]
    fn full_warp_target_examples() {
        let cfg = AugmentConfig::default();
        assert_eq!(full_warp_targets(100, &cfg), vec![70, 40, 10, 130, 160, 190, 220]);
        assert_eq!(full_warp_targets(240, &cfg), vec![210, 180, 150, 120, 90, 60, 30]);
        assert_eq!(full_warp_targets(50, &cfg), vec![20, 80, 110, 140, 170, 200, 230]);
        assert_eq!(full_warp_targets(30, &cfg), vec![60, 90, 120, 150, 180, 210, 240]);
    }

    #[test]
    fn warp_full_identity_and_length() {
        let cfg = AugmentConfig::default();
        let s = ramp(Label::Nod, 60);
        assert_eq!(warp_full(&s, 60, &cfg).unwrap(), s);
        let w = warp_full(&s, 30, &cfg).unwrap();
        assert_eq!((w.len(), w.label), (30, Label::Nod));
        assert!(warp_full(&s, 241, &cfg).is_err());
        assert!(warp_full(&s, 0, &cfg).is_err());
    }

    #[test]
    fn empty_head_has_no_variants() {
        let cfg = AugmentConfig::default();
        let s = ramp(Label::Nod, 100);
        let (head, tail) = head_tail_targets(100, ChangePointBounds { start: 0, end: 100 }, &cfg);
        assert!(head.is_empty() && tail.is_empty());
        assert!(head_tail_variants(&s, ChangePointBounds { start: 0, end: 100 }, &cfg).unwrap().is_empty());
    }

    #[test]
    fn head_targets_follow_stopping_rules() {
        let cfg = AugmentConfig::default();
        let targets = interval_targets(10, 100, &cfg);
        let (down, up) = targets.split_at(2);
        assert_eq!(down, &[6, 2]);
        assert_eq!(up.len(), 35);
        assert_eq!(up.first(), Some(&14));
        assert_eq!(up.last(), Some(&150));
    }

    #[test]
    fn untouched_interval_is_preserved() {
        let cfg = AugmentConfig::default();
        let s = ramp(Label::Shake, 120);
        let b = ChangePointBounds { start: 25, end: 95 };
        let (head, tail) = head_tail_targets(120, b, &cfg);
        let variants = head_tail_variants(&s, b, &cfg).unwrap();
        assert_eq!(variants.len(), head.len() + tail.len());
        for (v, &q) in variants.iter().zip(&head) {
            assert_eq!(v.samples[q..], s.samples[25..]);
            assert_eq!(v.len(), q + 95);
        }
        for (v, &q) in variants[head.len()..].iter().zip(&tail) {
            assert_eq!(v.samples[..95], s.samples[..95]);
            assert_eq!(v.len(), 95 + q);
        }
        assert!(variants.iter().all(|v| v.label == Label::Shake && v.user_id == "u"));
    }

    #[test]
    fn other_sequence_count() {
        let cfg = AugmentConfig::default();
        let s = ramp(Label::Other, 100);
        let out = augment_dataset(&Dataset::new(vec![s.clone()]), &cfg, &PeltConfig::default()).unwrap();
        // head/tail from the fifths rule: |Q| = 20 on both sides, rest 80
        let brute = |q: usize| (1..240usize).filter(|&t| t != q && t % 4 == q % 4 && (t < q || 80 + t <= 240)).count();
        assert_eq!(out.len(), 1 + 7 + 2 * brute(20));
        assert_eq!(out.sequences[0], s);
        assert!(augment_dataset(&Dataset::default(), &cfg, &PeltConfig::default()).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn monotone_stays_monotone(
            steps in proptest::collection::vec(0.0f64..1.0, 1..200),
            target in 1usize..240,
        ) {
            let channel: Vec<f64> = steps.iter().scan(0.0, |a, s| { *a += s; Some(*a) }).collect();
            let out = resample_linear(&channel, target).unwrap();
            prop_assert_eq!(out.len(), target);
            prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(out[0], channel[0]);
            if target > 1 {
                prop_assert_eq!(*out.last().unwrap(), *channel.last().unwrap());
            }
        }

        #[test]
        fn augmented_lengths_in_range(len in 50usize..=240, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let cfg = AugmentConfig::default();
            let (x, y) = ((a * len as f64) as usize, (b * len as f64) as usize);
            let bounds = ChangePointBounds { start: x.min(y), end: x.max(y) };
            let s = ramp(Label::Nod, len);
            for v in head_tail_variants(&s, bounds, &cfg).unwrap() {
                prop_assert!((1..=240).contains(&v.len()));
            }
            for t in full_warp_targets(len, &cfg) {
                prop_assert!((1..=240).contains(&t));
            }
        }
    }
}
