//! Noise-level schedules, training-time noise sampling, and the EDM
//! preconditioning coefficients.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Default standard deviation of the data (style vectors).
pub const SIGMA_DATA: f64 = 0.2;

/// Parameters of the Karras noise schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub n_steps: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            sigma_min: 1e-4,
            sigma_max: 3.0,
            rho: 9.0,
            n_steps: 3,
        }
    }
}

impl ScheduleParams {
    pub fn with_steps(self, n_steps: usize) -> Self {
        Self { n_steps, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            sigma_min,
            sigma_max,
            rho,
            n_steps,
        } = *self;
        if !(sigma_min.is_finite() && sigma_min > 0.0) {
            return Err(domain(format!("sigma_min must be positive, got {sigma_min}")));
        }
        if !(sigma_max.is_finite() && sigma_max > sigma_min) {
            return Err(domain(format!(
                "sigma_max must exceed sigma_min ({sigma_min}), got {sigma_max}"
            )));
        }
        if !(rho.is_finite() && rho >= 1.0) {
            return Err(domain(format!("rho must be >= 1, got {rho}")));
        }
        if n_steps < 2 {
            return Err(domain(format!("n_steps must be >= 2, got {n_steps}")));
        }
        Ok(())
    }
}

/// Strictly decreasing noise levels from `sigma_max` down to `sigma_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSchedule {
    params: ScheduleParams,
    sigmas: Vec<f64>,
}

impl SigmaSchedule {
    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn last(&self) -> f64 {
        self.sigmas[self.sigmas.len() - 1]
    }

    /// Consecutive `(sigma_i, sigma_{i+1})` pairs.
    pub fn steps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.sigmas.windows(2).map(|w| (w[0], w[1]))
    }
}

/// Interpolates linearly in `sigma^(1/rho)` space between the endpoints.
///
/// The endpoints are stored exactly; interior points follow
/// `(max^(1/rho) + i/(N-1) * (min^(1/rho) - max^(1/rho)))^rho`.
pub fn karras_schedule(params: ScheduleParams) -> Result<SigmaSchedule> {
    params.validate()?;
    let n = params.n_steps;
    let inv_rho = 1.0 / params.rho;
    let hi = params.sigma_max.powf(inv_rho);
    let lo = params.sigma_min.powf(inv_rho);
    let last = (n - 1) as f64;
    let mut sigmas: Vec<f64> = (0..n)
        .map(|i| (hi + (i as f64 / last) * (lo - hi)).powf(params.rho))
        .collect();
    sigmas[0] = params.sigma_max;
    sigmas[n - 1] = params.sigma_min;
    if sigmas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(domain(format!(
            "schedule collapsed to non-decreasing values for {params:?}"
        )));
    }
    Ok(SigmaSchedule { params, sigmas })
}

/// Log-normal law of training noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSigmaDist {
    pub p_mean: f64,
    pub p_std: f64,
}

impl Default for TrainingSigmaDist {
    fn default() -> Self {
        Self {
            p_mean: -1.2,
            p_std: 1.2,
        }
    }
}

impl TrainingSigmaDist {
    /// `p_std == 0` is accepted and makes the draw deterministic.
    pub fn validate(&self) -> Result<()> {
        if !self.p_mean.is_finite() || !(self.p_std.is_finite() && self.p_std >= 0.0) {
            return Err(domain(format!("invalid training sigma law {self:?}")));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_training_sigma(self, rng)
    }
}

pub fn sample_training_sigma<R: Rng + ?Sized>(dist: &TrainingSigmaDist, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (dist.p_mean + dist.p_std * z).exp()
}

/// Input/output scalings that wrap the inner network of a denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preconditioning {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
    pub sigma_data: f64,
}

impl Preconditioning {
    /// `sqrt(sigma^2 + sigma_data^2)`, the reciprocal of `c_in`.
    pub fn sigma_star(&self) -> f64 {
        1.0 / self.c_in
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(domain(format!("{name} must be positive and finite, got {v}")))
    }
}

pub fn precondition(sigma: f64, sigma_data: f64) -> Result<Preconditioning> {
    check_positive("sigma", sigma)?;
    check_positive("sigma_data", sigma_data)?;
    let c_in = 1.0 / sigma.hypot(sigma_data);
    Ok(Preconditioning {
        c_skip: sigma_data * sigma_data * c_in * c_in,
        c_out: sigma * sigma_data * c_in,
        c_in,
        c_noise: sigma.ln() / 4.0,
        sigma_data,
    })
}

/// Weight `(sigma^2 + sigma_data^2) / (sigma * sigma_data)^2` of the
/// denoising objective; it equals `1 / c_out^2`.
pub fn loss_weight(sigma: f64, sigma_data: f64) -> Result<f64> {
    check_positive("sigma", sigma)?;
    check_positive("sigma_data", sigma_data)?;
    let prod = sigma * sigma_data;
    Ok((sigma * sigma + sigma_data * sigma_data) / (prod * prod))
}
