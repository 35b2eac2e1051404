use ndarray::{Array, Array2, ArrayBase, Data, Dimension};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::predicted_durations;
use super::upsample::{convolved, gaussian_kernel, phoneme_starts, softmax_rows};
use super::{DurationProbMatrix, KernelParams};
use crate::error::{domain, shape, Error, Result};
use crate::rng;

/// Gradient of `sum(upstream * diff_upsample(q))` with respect to `q`.
///
/// The kernel centres `l_{i-1}` depend on every earlier column of `q`; that
/// path is included. The frame count `ceil(l_N)` is piecewise constant and
/// contributes nothing.
pub fn diff_upsample_grad(
    q: &DurationProbMatrix,
    kp: &KernelParams,
    upstream: &Array2<f64>,
) -> Result<Array2<f64>> {
    kp.validate()?;
    let frames = predicted_durations(q).frames;
    let expected = (frames, q.phonemes());
    if upstream.dim() != expected {
        return Err(shape(format!(
            "upstream is {:?}, alignment is {:?}",
            upstream.dim(),
            expected
        )));
    }
    Ok(grad_raw(q.view(), kp.sigma_u, upstream))
}

pub(super) fn grad_raw(q: &Array2<f64>, sigma_u: f64, upstream: &Array2<f64>) -> Array2<f64> {
    let (max_duration, phonemes) = q.dim();
    let frames = upstream.nrows();
    let a = softmax_rows(&convolved(q, sigma_u, frames));
    let starts = phoneme_starts(q);
    let inv_var = 1.0 / (sigma_u * sigma_u);

    let mut g_f = Array2::zeros((frames, phonemes));
    for n in 0..frames {
        let dot: f64 = (0..phonemes).map(|j| upstream[[n, j]] * a[[n, j]]).sum();
        for i in 0..phonemes {
            g_f[[n, i]] = a[[n, i]] * (upstream[[n, i]] - dot);
        }
    }

    let mut grad = Array2::zeros((max_duration, phonemes));
    let mut g_start = vec![0.0; phonemes];
    for i in 0..phonemes {
        for n in 0..frames {
            let gf = g_f[[n, i]];
            if gf == 0.0 {
                continue;
            }
            for k in 0..max_duration {
                let x = n as f64 - k as f64 - starts[i];
                let kern = gaussian_kernel(x, 0.0, sigma_u);
                grad[[k, i]] += gf * kern;
                g_start[i] += gf * q[[k, i]] * kern * x * inv_var;
            }
        }
    }

    // l_{i-1} = sum_{j < i} colsum_j, so column j receives every later g_start
    let mut suffix = 0.0;
    for j in (0..phonemes).rev() {
        if suffix != 0.0 {
            grad.column_mut(j).mapv_inplace(|v| v + suffix);
        }
        suffix += g_start[j];
    }
    grad
}

/// Norm-triggered gradient rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradScale {
    pub threshold: f64,
    pub factor: f64,
}

impl Default for GradScale {
    fn default() -> Self {
        Self {
            threshold: 20.0,
            factor: 0.2,
        }
    }
}

impl GradScale {
    /// Unconditional 0.01 scaling used for projection and recurrent layers.
    pub fn projection() -> Self {
        Self {
            threshold: 0.0,
            factor: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(domain(format!("factor must lie in (0, 1], got {}", self.factor)));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(domain(format!(
                "threshold must be non-negative, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Returns `g * factor` when `||g||_2 > threshold`, otherwise `g`.
pub fn scale_gradient<S, D>(g: &ArrayBase<S, D>, scale: &GradScale) -> Result<Array<f64, D>>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    scale.validate()?;
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > scale.threshold {
        Ok(g.mapv(|v| v * scale.factor))
    } else {
        Ok(g.to_owned())
    }
}

/// Largest `|d/dx exp(-x^2 / (2 sigma_u^2))|` over a grid on `[0, domain_len]`.
pub fn kernel_grad_sup(sigma_u: f64, domain_len: f64, grid_step: f64) -> Result<f64> {
    KernelParams::new(sigma_u)?;
    if !(domain_len > 0.0 && grid_step > 0.0) {
        return Err(domain("domain length and grid step must be positive"));
    }
    let points = (domain_len / grid_step).floor() as usize;
    let sup = (0..=points)
        .map(|j| {
            let x = j as f64 * grid_step;
            x / (sigma_u * sigma_u) * gaussian_kernel(x, 0.0, sigma_u)
        })
        .fold(0.0, f64::max);
    Ok(sup)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub n_instances: usize,
    pub seed: u64,
    pub sigma_u: f64,
    pub eps: f64,
    pub max_phonemes: usize,
    pub max_duration: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_instance: usize,
}

/// Entries whose magnitude is below this floor are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Central-difference step.
pub const FD_EPS: f64 = 1e-5;

/// Compares [`diff_upsample_grad`] against central finite differences on
/// random instances with `N <= max_phonemes`, `L <= max_duration`.
pub fn grad_check(
    n_instances: usize,
    seed: u64,
    max_phonemes: usize,
    max_duration: usize,
    kp: &KernelParams,
) -> Result<GradCheckReport> {
    kp.validate()?;
    if n_instances == 0 || max_phonemes == 0 || max_duration < 2 {
        return Err(domain("grad_check needs instances, phonemes and L >= 2"));
    }
    let errors: Vec<(f64, f64)> = (0..n_instances)
        .into_par_iter()
        .map(|idx| {
            let mut rng = rng::stream(seed, idx as u64, 0);
            let n = rng.random_range(1..=max_phonemes);
            let l = rng.random_range(2..=max_duration);
            let q = Array2::from_shape_fn((l, n), |_| rng.random_range(0.05..0.95));
            let frames = predicted_durations(&DurationProbMatrix::new(q.clone())?).frames;
            let upstream = Array2::from_shape_fn((frames, n), |_| rng.random_range(-1.0..1.0));
            Ok(instance_error(&q, kp.sigma_u, &upstream))
        })
        .collect::<Result<_>>()?;
    let (worst_instance, &(max_rel_error, _)) = errors
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .expect("non-empty");
    let max_abs_error = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    if !max_rel_error.is_finite() {
        return Err(Error::Domain("non-finite gradient error".into()));
    }
    Ok(GradCheckReport {
        n_instances,
        seed,
        sigma_u: kp.sigma_u,
        eps: FD_EPS,
        max_phonemes,
        max_duration,
        max_rel_error,
        max_abs_error,
        worst_instance,
    })
}

fn objective(q: &Array2<f64>, sigma_u: f64, upstream: &Array2<f64>) -> f64 {
    let a = softmax_rows(&convolved(q, sigma_u, upstream.nrows()));
    (&a * upstream).sum()
}

/// `(max relative, max absolute)` error of one instance.
fn instance_error(q: &Array2<f64>, sigma_u: f64, upstream: &Array2<f64>) -> (f64, f64) {
    let analytic = grad_raw(q, sigma_u, upstream);
    let mut probe = q.clone();
    let (mut rel, mut abs) = (0.0f64, 0.0f64);
    for ((k, i), &a) in analytic.indexed_iter() {
        let orig = probe[[k, i]];
        probe[[k, i]] = orig + FD_EPS;
        let plus = objective(&probe, sigma_u, upstream);
        probe[[k, i]] = orig - FD_EPS;
        let minus = objective(&probe, sigma_u, upstream);
        probe[[k, i]] = orig;
        let fd = (plus - minus) / (2.0 * FD_EPS);
        let err = (a - fd).abs();
        abs = abs.max(err);
        rel = rel.max(err / a.abs().max(fd.abs()).max(REL_FLOOR));
    }
    (rel, abs)
}
