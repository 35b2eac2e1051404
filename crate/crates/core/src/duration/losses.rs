use ndarray::Array2;

use super::{DurationProbMatrix, Durations};
use crate::error::{domain, shape, Error, Result};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` inside the
/// cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Indicator targets: entry `[k - 1, i]` is 1 iff `d_gt[i] >= k`.
pub fn duration_targets(d_gt: &Durations, max_duration: usize) -> Result<Array2<f64>> {
    let frames = d_gt.frames()?;
    if let Some(d) = frames.iter().find(|&&d| d < 1 || d > max_duration) {
        return Err(domain(format!(
            "ground-truth duration {d} outside [1, {max_duration}]"
        )));
    }
    Ok(Array2::from_shape_fn((max_duration, frames.len()), |(k, i)| {
        if frames[i] > k {
            1.0
        } else {
            0.0
        }
    }))
}

/// Mean binary cross-entropy between `q` and the indicator targets.
pub fn bce_duration_loss(q: &DurationProbMatrix, d_gt: &Durations) -> Result<f64> {
    if d_gt.len() != q.phonemes() {
        return Err(shape(format!(
            "q has {} phonemes, durations have {}",
            q.phonemes(),
            d_gt.len()
        )));
    }
    let targets = duration_targets(d_gt, q.max_duration())?;
    let total: f64 = q
        .view()
        .iter()
        .zip(targets.iter())
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / targets.len() as f64)
}

/// Expected durations read off `q`, with the derived end positions and
/// predicted frame count.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedDurations {
    pub durations: Vec<f64>,
    /// `ends[i]` is the end position of phoneme `i` (cumulative sum).
    pub ends: Vec<f64>,
    /// `ceil(ends[N - 1])`.
    pub frames: usize,
}

impl PredictedDurations {
    /// Start offset of phoneme `i` (`0` for the first).
    pub fn start(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.ends[i - 1]
        }
    }

    pub fn total(&self) -> f64 {
        self.ends.last().copied().unwrap_or(0.0)
    }
}

pub fn predicted_durations(q: &DurationProbMatrix) -> PredictedDurations {
    let durations: Vec<f64> = q.view().columns().into_iter().map(|c| c.sum()).collect();
    let ends: Vec<f64> = durations
        .iter()
        .scan(0.0, |acc, d| {
            *acc += d;
            Some(*acc)
        })
        .collect();
    let total = ends.last().copied().unwrap_or(0.0);
    PredictedDurations {
        durations,
        ends,
        frames: frame_count(total),
    }
}

/// `ceil(total)`, ignoring rounding noise just above an integer.
pub(crate) fn frame_count(total: f64) -> usize {
    let nearest = total.round();
    if (total - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest.max(0.0) as usize
    } else {
        total.ceil().max(0.0) as usize
    }
}

/// Mean absolute difference of two equal-length curves.
pub fn l1_duration_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(shape(format!("lengths differ: {} vs {}", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::Shape("empty curves".into()));
    }
    let total: f64 = pred.iter().zip(target).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / pred.len() as f64)
}
