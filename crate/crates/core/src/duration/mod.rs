//! Duration modeling: duration-probability outputs, duration losses, the
//! hard / Gaussian / differentiable upsamplers and their gradients.
//!
//! Formulas use 1-based frame and duration indices; storage is 0-based.
//! Row `k - 1` of a [`DurationProbMatrix`] holds the probability that each
//! phoneme lasts at least `k` frames.

mod grad;
mod losses;
pub mod sweep;
mod upsample;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{domain, shape, Result};
use crate::table::{fmt_real, Table};

pub use grad::{
    diff_upsample_grad, grad_check, kernel_grad_sup, scale_gradient, GradCheckReport, GradScale,
};
pub use losses::{
    bce_duration_loss, duration_targets, l1_duration_loss, predicted_durations, PredictedDurations,
    BCE_EPS,
};
pub use upsample::{
    diff_upsample, diff_upsample_with_frames, gaussian_kernel, gaussian_upsample, hard_upsample,
};

/// Default maximum phoneme duration in frames.
pub const DEFAULT_MAX_DURATION: usize = 50;

/// `q[k, i]`: probability that phoneme `i` lasts at least `k + 1` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationProbMatrix(Array2<f64>);

impl DurationProbMatrix {
    pub fn new(q: Array2<f64>) -> Result<Self> {
        if q.nrows() == 0 || q.ncols() == 0 {
            return Err(shape(format!("q must be non-empty, got {:?}", q.dim())));
        }
        if let Some(v) = q.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(domain(format!("q entries must lie in [0, 1], found {v}")));
        }
        Ok(Self(q))
    }

    /// Maximum duration `L`.
    pub fn max_duration(&self) -> usize {
        self.0.nrows()
    }

    pub fn phonemes(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(&self.0, "q")
    }
}

/// Per-phoneme durations in frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Durations(Vec<f64>);

impl Durations {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(domain("durations must be non-empty"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(domain(format!("durations must be positive, found {v}")));
        }
        Ok(Self(values))
    }

    pub fn from_frames(frames: &[usize]) -> Result<Self> {
        Self::new(frames.iter().map(|&d| d as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Integer frame counts, if every value is integral.
    pub fn frames(&self) -> Result<Vec<usize>> {
        self.0
            .iter()
            .map(|&v| {
                if v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(domain(format!("duration {v} is not an integer")))
                }
            })
            .collect()
    }

    /// End positions `l_i = d_1 + ... + d_i`.
    pub fn ends(&self) -> Vec<f64> {
        self.0
            .iter()
            .scan(0.0, |acc, d| {
                *acc += d;
                Some(*acc)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentKind {
    Hard,
    Soft,
}

/// Frames × phonemes alignment matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub a: Array2<f64>,
    pub kind: AlignmentKind,
}

impl Alignment {
    pub fn frames(&self) -> usize {
        self.a.nrows()
    }

    pub fn phonemes(&self) -> usize {
        self.a.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            AlignmentKind::Soft => {
                for (n, row) in self.a.rows().into_iter().enumerate() {
                    let sum: f64 = row.sum();
                    if (sum - 1.0).abs() > 1e-9 || row.iter().any(|v| *v < 0.0) {
                        return Err(domain(format!("soft row {n} sums to {sum}")));
                    }
                }
            }
            AlignmentKind::Hard => {
                let mut last_col = 0;
                for (n, row) in self.a.rows().into_iter().enumerate() {
                    let ones: Vec<usize> = row
                        .iter()
                        .enumerate()
                        .filter(|(_, v)| **v == 1.0)
                        .map(|(i, _)| i)
                        .collect();
                    if ones.len() != 1 || row.iter().any(|v| *v != 0.0 && *v != 1.0) {
                        return Err(domain(format!("hard row {n} is not one-hot")));
                    }
                    if ones[0] < last_col {
                        return Err(domain(format!("hard row {n} steps backwards")));
                    }
                    last_col = ones[0];
                }
            }
        }
        Ok(())
    }

    /// Column index of the largest entry in each row.
    pub fn argmax(&self) -> Vec<usize> {
        self.a
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
                        if *v > best.1 {
                            (i, *v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let kind = match self.kind {
            AlignmentKind::Hard => "hard",
            AlignmentKind::Soft => "soft",
        };
        matrix_csv(&self.a, kind)
    }
}

/// Width of the upsampling kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub sigma_u: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { sigma_u: 1.5 }
    }
}

impl KernelParams {
    pub fn new(sigma_u: f64) -> Result<Self> {
        let kp = Self { sigma_u };
        kp.validate()?;
        Ok(kp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_u.is_finite() && self.sigma_u > 0.0 {
            Ok(())
        } else {
            Err(domain(format!("sigma_u must be positive, got {}", self.sigma_u)))
        }
    }
}

fn matrix_csv(m: &Array2<f64>, kind: &str) -> String {
    let (rows, cols) = m.dim();
    let mut table = Table::new((0..cols).map(|c| format!("c{c}")));
    table.comment(format!("kind = {kind}")).comment(format!("shape = {rows},{cols}"));
    for row in m.rows() {
        table.push(row.iter().map(|v| fmt_real(*v)).collect());
    }
    table.render()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn q_validation() {
        assert!(DurationProbMatrix::new(array![[0.5, 1.2]]).is_err());
        assert!(DurationProbMatrix::new(Array2::zeros((0, 2))).is_err());
        let q = DurationProbMatrix::new(array![[1.0, 0.0], [0.5, 0.0]]).unwrap();
        assert_eq!((q.max_duration(), q.phonemes()), (2, 2));
    }

    #[test]
    fn durations_validation() {
        assert!(Durations::new(vec![]).is_err());
        assert!(Durations::new(vec![1.0, 0.0]).is_err());
        assert!(Durations::new(vec![1.5]).unwrap().frames().is_err());
        assert_eq!(Durations::from_frames(&[2, 3]).unwrap().ends(), [2.0, 5.0]);
    }

    #[test]
    fn csv_has_shape_header() {
        let q = DurationProbMatrix::new(array![[1.0, 0.5]]).unwrap();
        let text = q.to_csv();
        assert!(text.starts_with("# kind = q\n# shape = 1,2\nc0,c1\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn hard_validation_catches_bad_rows() {
        let bad = Alignment { a: array![[0.0, 1.0], [1.0, 0.0]], kind: AlignmentKind::Hard };
        assert!(bad.validate().is_err());
        let bad = Alignment { a: array![[0.6, 0.6]], kind: AlignmentKind::Soft };
        assert!(bad.validate().is_err());
    }
}
