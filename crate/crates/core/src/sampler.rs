//! Probability-flow ODE integration from the prior at `sigma_max` down to
//! `sigma_min`.
//!
//! All randomness comes from [`crate::rng::stream`], addressed by
//! `(seed, sample index, step)`: step 0 holds the prior draw and step
//! `i + 1` the ancestral noise of transition `i`. Batches therefore come
//! out identical whatever the thread count.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{ConditioningVector, DenoiserSpec, StyleVector};
use crate::error::{domain, Error, Result};
use crate::rng::{self, normal_vec, PRIOR_STEP};
use crate::schedule::SigmaSchedule;
use crate::table::fmt_real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    Euler,
    Heun,
    Dpm2Ancestral,
}

impl SamplerMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Euler => "euler",
            Self::Heun => "heun",
            Self::Dpm2Ancestral => "dpm2_ancestral",
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, Self::Dpm2Ancestral)
    }
}

impl fmt::Display for SamplerMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Self::Euler),
            "heun" => Ok(Self::Heun),
            "dpm2_ancestral" => Ok(Self::Dpm2Ancestral),
            other => Err(domain(format!(
                "unknown method '{other}' (expected euler, heun or dpm2_ancestral)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub method: SamplerMethod,
    pub schedule: SigmaSchedule,
    /// Strength of the ancestral noise, in `[0, 1]`.
    pub eta: f64,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(method: SamplerMethod, schedule: SigmaSchedule) -> Self {
        Self {
            method,
            schedule,
            eta: 1.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(domain(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        self.schedule.params().validate()
    }

    /// Denoiser evaluations per sample.
    pub fn evaluations(&self) -> usize {
        let transitions = self.schedule.len() - 1;
        match self.method {
            SamplerMethod::Euler => transitions,
            SamplerMethod::Heun => 2 * transitions - 1,
            SamplerMethod::Dpm2Ancestral => 2 * transitions,
        }
    }
}

/// `dx/dsigma = (x - K(x; sigma)) / sigma`.
pub fn ode_rhs(spec: &DenoiserSpec, x: &StyleVector, sigma: f64) -> Result<StyleVector> {
    rhs(spec, x, sigma, &ConditioningVector::none())
}

fn rhs(
    spec: &DenoiserSpec,
    x: &StyleVector,
    sigma: f64,
    cond: &ConditioningVector,
) -> Result<StyleVector> {
    let den = spec.denoise(x, sigma, cond)?;
    Ok(StyleVector::new(
        x.iter().zip(den.iter()).map(|(x, d)| (x - d) / sigma).collect(),
    ))
}

/// Draw from `N(0, sigma_max^2 I)`.
pub fn sample_prior<R: Rng + ?Sized>(dim: usize, sigma_max: f64, rng: &mut R) -> StyleVector {
    StyleVector::new(normal_vec(rng, dim)).scaled(sigma_max)
}

/// Noise-level split of one ancestral step: integrate down to `sigma_down`,
/// then add fresh noise of std `sigma_up`, so that
/// `sigma_down^2 + sigma_up^2 = sigma_to^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AncestralSplit {
    pub sigma_up: f64,
    pub sigma_down: f64,
}

pub fn ancestral_split(sigma_from: f64, sigma_to: f64, eta: f64) -> AncestralSplit {
    let ratio = sigma_to / sigma_from;
    let sigma_up = (eta * sigma_to * (1.0 - ratio * ratio).max(0.0).sqrt()).min(sigma_to);
    let sigma_down = (sigma_to * sigma_to - sigma_up * sigma_up).max(0.0).sqrt();
    AncestralSplit { sigma_up, sigma_down }
}

/// Integrates one sample from `x0` (drawn at `schedule.first()`), using
/// sample index 0 for any ancestral noise.
pub fn integrate(
    spec: &DenoiserSpec,
    config: &SamplerConfig,
    x0: &StyleVector,
    cond: &ConditioningVector,
) -> Result<StyleVector> {
    integrate_sample(spec, config, x0, cond, 0, None)
}

/// Integrates sample `index`; when `trajectory` is given every state,
/// starting with `x0`, is pushed onto it.
pub fn integrate_sample(
    spec: &DenoiserSpec,
    config: &SamplerConfig,
    x0: &StyleVector,
    cond: &ConditioningVector,
    index: u64,
    mut trajectory: Option<&mut Vec<StyleVector>>,
) -> Result<StyleVector> {
    config.validate()?;
    let mut x = x0.clone();
    if let Some(t) = trajectory.as_deref_mut() {
        t.push(x.clone());
    }
    let transitions = config.schedule.len() - 1;
    for (step, (sigma, sigma_next)) in config.schedule.steps().enumerate() {
        let last = step + 1 == transitions;
        x = match config.method {
            SamplerMethod::Euler => euler_step(spec, &x, sigma, sigma_next, cond)?,
            SamplerMethod::Heun if last => euler_step(spec, &x, sigma, sigma_next, cond)?,
            SamplerMethod::Heun => heun_step(spec, &x, sigma, sigma_next, cond)?,
            SamplerMethod::Dpm2Ancestral => {
                let split = ancestral_split(sigma, sigma_next, config.eta);
                let mut next = if split.sigma_down > 0.0 {
                    midpoint_step(spec, &x, sigma, split.sigma_down, cond)?
                } else {
                    euler_step(spec, &x, sigma, split.sigma_down, cond)?
                };
                if split.sigma_up > 0.0 {
                    let mut rng = rng::stream(config.seed, index, step as u64 + 1);
                    let noise = normal_vec(&mut rng, x.dim());
                    next = next.axpy(split.sigma_up, &StyleVector::new(noise));
                }
                next
            }
        };
        if !x.is_finite() {
            return Err(Error::Divergence { step });
        }
        if let Some(t) = trajectory.as_deref_mut() {
            t.push(x.clone());
        }
    }
    Ok(x)
}

fn euler_step(
    spec: &DenoiserSpec,
    x: &StyleVector,
    sigma: f64,
    sigma_next: f64,
    cond: &ConditioningVector,
) -> Result<StyleVector> {
    let d = rhs(spec, x, sigma, cond)?;
    Ok(x.axpy(sigma_next - sigma, &d))
}

fn heun_step(
    spec: &DenoiserSpec,
    x: &StyleVector,
    sigma: f64,
    sigma_next: f64,
    cond: &ConditioningVector,
) -> Result<StyleVector> {
    let h = sigma_next - sigma;
    let d = rhs(spec, x, sigma, cond)?;
    let predicted = x.axpy(h, &d);
    let d_next = rhs(spec, &predicted, sigma_next, cond)?;
    let slope = StyleVector::new(d.iter().zip(d_next.iter()).map(|(a, b)| 0.5 * (a + b)).collect());
    Ok(x.axpy(h, &slope))
}

/// Second-order midpoint step with the stage placed at the geometric mean
/// of the two noise levels.
fn midpoint_step(
    spec: &DenoiserSpec,
    x: &StyleVector,
    sigma: f64,
    sigma_down: f64,
    cond: &ConditioningVector,
) -> Result<StyleVector> {
    let sigma_mid = (0.5 * (sigma.ln() + sigma_down.ln())).exp();
    let d = rhs(spec, x, sigma, cond)?;
    let x_mid = x.axpy(sigma_mid - sigma, &d);
    let d_mid = rhs(spec, &x_mid, sigma_mid, cond)?;
    Ok(x.axpy(sigma_down - sigma, &d_mid))
}

/// Output of [`sample_styles`].
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub samples: Vec<StyleVector>,
    pub trajectories: Option<Vec<Vec<StyleVector>>>,
    pub wall_time: f64,
    pub method: SamplerMethod,
    pub steps: usize,
    pub seed: u64,
}

/// JSON summary of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n: usize,
    pub method: SamplerMethod,
    pub steps: usize,
    pub wall_time_s: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub seed: u64,
}

impl SampleBatch {
    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, StyleVector::dim)
    }

    /// Per-coordinate mean and population standard deviation.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        coordinate_moments(&self.samples)
    }

    pub fn summary(&self) -> BatchSummary {
        let (mean, std) = self.moments();
        BatchSummary {
            n: self.samples.len(),
            method: self.method,
            steps: self.steps,
            wall_time_s: self.wall_time,
            mean,
            std,
            seed: self.seed,
        }
    }

    /// One row per sample, one column per coordinate.
    pub fn to_csv(&self) -> String {
        let mut out = (0..self.dim())
            .map(|k| format!("x{k}"))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for s in &self.samples {
            let row: Vec<String> = s.iter().map(|v| fmt_real(*v)).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub(crate) fn coordinate_moments(samples: &[StyleVector]) -> (Vec<f64>, Vec<f64>) {
    let dim = samples.first().map_or(0, StyleVector::dim);
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        mean.iter_mut().zip(s.iter()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in samples {
        var.iter_mut()
            .zip(s.iter().zip(&mean))
            .for_each(|(acc, (v, m))| *acc += (v - m) * (v - m));
    }
    let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
    (mean, std)
}

/// Draws `n` independent prior samples and integrates each per `config`.
pub fn sample_styles(
    spec: &DenoiserSpec,
    config: &SamplerConfig,
    n: usize,
    dim: usize,
    cond: &ConditioningVector,
) -> Result<SampleBatch> {
    run_batch(spec, config, n, dim, cond, false)
}

/// As [`sample_styles`], also keeping every intermediate state.
pub fn sample_styles_traced(
    spec: &DenoiserSpec,
    config: &SamplerConfig,
    n: usize,
    dim: usize,
    cond: &ConditioningVector,
) -> Result<SampleBatch> {
    run_batch(spec, config, n, dim, cond, true)
}

fn run_batch(
    spec: &DenoiserSpec,
    config: &SamplerConfig,
    n: usize,
    dim: usize,
    cond: &ConditioningVector,
    traced: bool,
) -> Result<SampleBatch> {
    if n == 0 {
        return Err(domain("n must be at least 1"));
    }
    if let Some(d) = spec.dim() {
        if d != dim {
            return Err(crate::error::shape(format!(
                "denoiser is {d}-dimensional, requested {dim}"
            )));
        }
    }
    config.validate()?;
    let started = Instant::now();
    let results: Vec<(StyleVector, Vec<StyleVector>)> = (0..n as u64)
        .into_par_iter()
        .map(|index| {
            let mut prior_rng = rng::stream(config.seed, index, PRIOR_STEP);
            let x0 = sample_prior(dim, config.schedule.first(), &mut prior_rng);
            let mut path = Vec::new();
            let out = integrate_sample(spec, config, &x0, cond, index, traced.then_some(&mut path))?;
            Ok((out, path))
        })
        .collect::<Result<_>>()?;
    let wall_time = started.elapsed().as_secs_f64();
    let (samples, paths): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(SampleBatch {
        samples,
        trajectories: traced.then_some(paths),
        wall_time,
        method: config.method,
        steps: config.schedule.len(),
        seed: config.seed,
    })
}
