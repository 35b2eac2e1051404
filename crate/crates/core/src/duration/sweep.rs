//! The σ_u trade-off sweep: alignment distortion against the hard
//! upsampler and gradient magnitude, over a grid of kernel widths.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grad::grad_raw;
use super::{diff_upsample, duration_targets, hard_upsample, DurationProbMatrix, Durations, KernelParams};
use crate::error::{domain, Result};
use crate::metrics::alignment_distortion;
use crate::rng;
use crate::table::{fmt_real, Table};

/// One random duration sequence with per-phoneme jitter for the predictor-like `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepInstance {
    pub frames: Vec<usize>,
    pub jitter: Vec<f64>,
}

impl SweepInstance {
    pub fn durations(&self) -> Durations {
        Durations::from_frames(&self.frames).expect("frames are positive")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaSweepConfig {
    pub n_instances: usize,
    pub seed: u64,
    pub max_phonemes: usize,
    pub max_frames: usize,
    /// Rows `L` of every `q`.
    pub max_duration: usize,
}

impl Default for SigmaSweepConfig {
    fn default() -> Self {
        Self {
            n_instances: 100,
            seed: 1,
            max_phonemes: 8,
            max_frames: 6,
            max_duration: 16,
        }
    }
}

impl SigmaSweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_instances == 0 {
            return Err(domain("n_instances must be positive"));
        }
        if self.max_phonemes < 2 {
            return Err(domain("max_phonemes must be at least 2"));
        }
        if self.max_frames == 0 || self.max_frames > self.max_duration {
            return Err(domain(format!(
                "max_frames must lie in [1, {}], got {}",
                self.max_duration, self.max_frames
            )));
        }
        Ok(())
    }
}

/// `n` instances with `N` in `[2, max_phonemes]` and durations in `[1, max_frames]`.
pub fn random_instances(cfg: &SigmaSweepConfig) -> Vec<SweepInstance> {
    (0..cfg.n_instances)
        .map(|j| {
            let mut rng = rng::stream(cfg.seed, j as u64, 0);
            let n = rng.random_range(2..=cfg.max_phonemes);
            let frames = (0..n).map(|_| rng.random_range(1..=cfg.max_frames)).collect();
            let jitter = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            SweepInstance { frames, jitter }
        })
        .collect()
}

/// Indicator targets of the instance as a `q` matrix.
pub fn hard_q(inst: &SweepInstance, max_duration: usize) -> Result<DurationProbMatrix> {
    DurationProbMatrix::new(duration_targets(&inst.durations(), max_duration)?)
}

/// Sigmoid ramp `q[k, i] = sigmoid(4 (d_i + u_i - k))`, resembling a
/// trained predictor's output.
pub fn predictor_q(inst: &SweepInstance, max_duration: usize) -> Result<DurationProbMatrix> {
    let q = Array2::from_shape_fn((max_duration, inst.frames.len()), |(k, i)| {
        let z = 4.0 * (inst.frames[i] as f64 + inst.jitter[i] - (k + 1) as f64);
        1.0 / (1.0 + (-z).exp())
    });
    DurationProbMatrix::new(q)
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || n < 2 {
        return Err(domain(format!("invalid log grid {lo}:{hi}:{n}")));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|j| match j {
            0 => lo,
            _ if j == n - 1 => hi,
            _ => (a + (b - a) * j as f64 / (n - 1) as f64).exp(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaSweepRow {
    pub sigma_u: f64,
    /// Mean over instances of the distortion between the soft alignment of
    /// hard-target `q` and the hard alignment.
    pub mean_distortion: f64,
    /// Max over instances of the L2 norm of d(distortion)/dq at the
    /// predictor-like `q`.
    pub max_grad_norm: f64,
}

/// Evaluates every grid point; rows come back sorted by `sigma_u`.
pub fn sigma_sweep(grid: &[f64], cfg: &SigmaSweepConfig) -> Result<Vec<SigmaSweepRow>> {
    cfg.validate()?;
    for &s in grid {
        KernelParams::new(s)?;
    }
    let instances = random_instances(cfg);
    let mut rows = grid
        .par_iter()
        .map(|&sigma_u| sweep_point(sigma_u, &instances, cfg.max_duration))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.sigma_u.total_cmp(&b.sigma_u));
    Ok(rows)
}

fn sweep_point(sigma_u: f64, instances: &[SweepInstance], max_duration: usize) -> Result<SigmaSweepRow> {
    let kp = KernelParams::new(sigma_u)?;
    let mut total = 0.0;
    let mut max_grad_norm = 0.0f64;
    for inst in instances {
        let hard = hard_upsample(&inst.durations())?;
        let soft = diff_upsample(&hard_q(inst, max_duration)?, &kp)?;
        total += alignment_distortion(&soft, &hard)?;

        let q = predictor_q(inst, max_duration)?;
        let soft = diff_upsample(&q, &kp)?;
        let upstream = distortion_upstream(&soft.a, &hard.a);
        let g = grad_raw(q.view(), sigma_u, &upstream);
        max_grad_norm = max_grad_norm.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(SigmaSweepRow {
        sigma_u,
        mean_distortion: total / instances.len() as f64,
        max_grad_norm,
    })
}

/// d(distortion)/d(soft) restricted to the soft alignment's own rows.
fn distortion_upstream(soft: &Array2<f64>, hard: &Array2<f64>) -> Array2<f64> {
    let rows = soft.nrows().max(hard.nrows());
    let cols = soft.ncols();
    let norm = 1.0 / (rows * cols) as f64;
    Array2::from_shape_fn(soft.dim(), |(n, i)| {
        let h = if n < hard.nrows() { hard[[n, i]] } else { 0.0 };
        let diff = soft[[n, i]] - h;
        if diff > 0.0 {
            norm
        } else if diff < 0.0 {
            -norm
        } else {
            0.0
        }
    })
}

pub fn sweep_table(rows: &[SigmaSweepRow]) -> Table {
    let mut table = Table::new(["sigma_u", "mean_distortion", "max_grad_norm"]);
    for r in rows {
        table.push(vec![
            fmt_real(r.sigma_u),
            fmt_real(r.mean_distortion),
            fmt_real(r.max_grad_norm),
        ]);
    }
    table
}
