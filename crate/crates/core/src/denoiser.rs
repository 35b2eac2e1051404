//! Denoisers `K(x; sigma, cond)` and the objects they operate on.
//!
//! Analytic kinds return the exact posterior mean of the clean sample for a
//! Gaussian or Gaussian-mixture data law, which makes them oracles for the
//! sampling machinery. `LinearFit` is the simplest trainable kind and is
//! fitted against the weighted denoising objective.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, shape, Error, Result};
use crate::rng::normal_vec;
use crate::schedule::{loss_weight, precondition, TrainingSigmaDist};

/// A point in style space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StyleVector(Vec<f64>);

impl StyleVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &StyleVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `self + scale * other`, elementwise.
    pub fn axpy(&self, scale: f64, other: &StyleVector) -> StyleVector {
        StyleVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + scale * b)
                .collect(),
        )
    }

    pub fn scaled(&self, scale: f64) -> StyleVector {
        StyleVector(self.0.iter().map(|v| v * scale).collect())
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() == dim {
            Ok(())
        } else {
            Err(shape(format!(
                "expected a {dim}-dimensional vector, got {}",
                self.dim()
            )))
        }
    }
}

impl Deref for StyleVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for StyleVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Opaque conditioning (speaker embedding, text prosody). Analytic kinds
/// ignore it; callable denoisers receive it unchanged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditioningVector(pub Option<Vec<f64>>);

impl ConditioningVector {
    pub fn none() -> Self {
        Self(None)
    }

    pub fn some(values: Vec<f64>) -> Self {
        Self(Some(values))
    }

    pub fn as_slice(&self) -> Option<&[f64]> {
        self.0.as_deref()
    }
}

/// One isotropic Gaussian component of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: StyleVector,
    pub scale: f64,
}

/// Which function the linear coefficients parameterize.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitSpace {
    /// `K(x) = gain * x + offset`.
    #[default]
    Denoiser,
    /// `K(x) = c_skip x + c_out (gain * c_in x + offset)`, i.e. the
    /// coefficients describe the inner network.
    Network,
}

impl FitSpace {
    fn is_denoiser(&self) -> bool {
        *self == FitSpace::Denoiser
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBucket {
    pub lo: f64,
    pub hi: f64,
    pub gain: f64,
    pub offset: Vec<f64>,
}

impl LinearBucket {
    /// Geometric midpoint of the bucket.
    pub fn sigma_mid(&self) -> f64 {
        (self.lo * self.hi).sqrt()
    }

    pub fn contains(&self, sigma: f64) -> bool {
        self.lo <= sigma && sigma <= self.hi
    }
}

/// Per-noise-bucket linear denoiser; the JSON layout is
/// `{"sigma_data": .., "buckets": [{"lo", "hi", "gain", "offset"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub sigma_data: f64,
    #[serde(default, skip_serializing_if = "FitSpace::is_denoiser")]
    pub space: FitSpace,
    pub buckets: Vec<LinearBucket>,
}

impl LinearFit {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_data > 0.0) {
            return Err(domain("sigma_data must be positive"));
        }
        let Some(first) = self.buckets.first() else {
            return Err(domain("a linear fit needs at least one bucket"));
        };
        let dim = first.offset.len();
        for (i, b) in self.buckets.iter().enumerate() {
            if !(b.lo > 0.0 && b.lo < b.hi && b.hi.is_finite()) {
                return Err(domain(format!("bucket {i} has invalid range [{}, {}]", b.lo, b.hi)));
            }
            if b.offset.len() != dim {
                return Err(shape(format!("bucket {i} offset has wrong dimension")));
            }
        }
        if self.buckets.windows(2).any(|w| w[0].hi > w[1].lo) {
            return Err(domain("buckets must be ordered and non-overlapping"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.buckets.first().map_or(0, |b| b.offset.len())
    }

    pub fn bucket_for(&self, sigma: f64) -> Result<&LinearBucket> {
        self.buckets
            .iter()
            .find(|b| b.contains(sigma))
            .ok_or(Error::Coverage { sigma })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let fit: LinearFit = serde_json::from_str(text)?;
        fit.validate()?;
        Ok(fit)
    }

    fn apply(&self, x: &StyleVector, sigma: f64) -> Result<StyleVector> {
        let b = self.bucket_for(sigma)?;
        x.check_dim(b.offset.len())?;
        let out = match self.space {
            FitSpace::Denoiser => x.iter().zip(&b.offset).map(|(v, o)| b.gain * v + o).collect(),
            FitSpace::Network => {
                let p = precondition(sigma, self.sigma_data)?;
                x.iter()
                    .zip(&b.offset)
                    .map(|(v, o)| p.c_skip * v + p.c_out * (b.gain * p.c_in * v + o))
                    .collect()
            }
        };
        Ok(StyleVector(out))
    }
}

type DenoiseFn = dyn Fn(&StyleVector, f64, &ConditioningVector) -> StyleVector + Send + Sync;

/// Caller-supplied denoiser. Must be safe to call from several threads.
#[derive(Clone)]
pub struct CallableDenoiser(Arc<DenoiseFn>);

impl fmt::Debug for CallableDenoiser {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CallableDenoiser(..)")
    }
}

#[derive(Debug, Clone)]
pub enum DenoiserSpec {
    AnalyticGaussian { mean: StyleVector, scale: f64 },
    AnalyticMixture(Vec<MixtureComponent>),
    LinearFit(LinearFit),
    Callable(CallableDenoiser),
}

impl DenoiserSpec {
    pub fn gaussian(mean: StyleVector, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(domain(format!("scale must be positive, got {scale}")));
        }
        if !mean.is_finite() {
            return Err(domain("mean must be finite"));
        }
        Ok(Self::AnalyticGaussian { mean, scale })
    }

    pub fn mixture(components: Vec<MixtureComponent>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(domain("mixture needs at least one component"));
        };
        let dim = first.mean.dim();
        let mut total = 0.0;
        for (i, c) in components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(domain(format!("component {i} weight must be positive")));
            }
            if !(c.scale > 0.0 && c.scale.is_finite()) {
                return Err(domain(format!("component {i} scale must be positive")));
            }
            c.mean.check_dim(dim)?;
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(domain(format!("mixture weights sum to {total}, expected 1")));
        }
        Ok(Self::AnalyticMixture(components))
    }

    pub fn linear(fit: LinearFit) -> Result<Self> {
        fit.validate()?;
        Ok(Self::LinearFit(fit))
    }

    pub fn callable<F>(f: F) -> Self
    where
        F: Fn(&StyleVector, f64, &ConditioningVector) -> StyleVector + Send + Sync + 'static,
    {
        Self::Callable(CallableDenoiser(Arc::new(f)))
    }

    /// Dimension the denoiser expects, if it is fixed.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::AnalyticGaussian { mean, .. } => Some(mean.dim()),
            Self::AnalyticMixture(c) => c.first().map(|c| c.mean.dim()),
            Self::LinearFit(fit) => Some(fit.dim()),
            Self::Callable(_) => None,
        }
    }

    pub fn denoise(
        &self,
        x: &StyleVector,
        sigma: f64,
        cond: &ConditioningVector,
    ) -> Result<StyleVector> {
        if !(sigma > 0.0) {
            return Err(domain(format!("sigma must be positive, got {sigma}")));
        }
        if let Some(dim) = self.dim() {
            x.check_dim(dim)?;
        }
        match self {
            Self::AnalyticGaussian { mean, scale } => Ok(gaussian_posterior(x, mean, *scale, sigma)),
            Self::AnalyticMixture(components) => Ok(mixture_posterior(x, components, sigma)),
            Self::LinearFit(fit) => fit.apply(x, sigma),
            Self::Callable(f) => {
                let out = (f.0)(x, sigma, cond);
                x.check_dim(out.dim())?;
                Ok(out)
            }
        }
    }

    /// Score of the noised marginal, `(K(x; sigma) - x) / sigma^2`.
    pub fn score(&self, x: &StyleVector, sigma: f64) -> Result<StyleVector> {
        let d = self.denoise(x, sigma, &ConditioningVector::none())?;
        let inv = 1.0 / (sigma * sigma);
        Ok(StyleVector(
            d.iter().zip(x.iter()).map(|(d, x)| (d - x) * inv).collect(),
        ))
    }
}

fn gaussian_posterior(x: &StyleVector, mean: &StyleVector, scale: f64, sigma: f64) -> StyleVector {
    let s2 = scale * scale;
    let n2 = sigma * sigma;
    let denom = s2 + n2;
    StyleVector(
        x.iter()
            .zip(mean.iter())
            .map(|(x, m)| (s2 * x + n2 * m) / denom)
            .collect(),
    )
}

/// Posterior responsibilities of each component for `x` at noise `sigma`.
pub fn mixture_responsibilities(
    x: &StyleVector,
    components: &[MixtureComponent],
    sigma: f64,
) -> Vec<f64> {
    let d = x.dim() as f64;
    let logs: Vec<f64> = components
        .iter()
        .map(|c| {
            let var = c.scale * c.scale + sigma * sigma;
            let dist2: f64 = x.iter().zip(c.mean.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            c.weight.ln() - 0.5 * d * var.ln() - dist2 / (2.0 * var)
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

fn mixture_posterior(x: &StyleVector, components: &[MixtureComponent], sigma: f64) -> StyleVector {
    let w = mixture_responsibilities(x, components, sigma);
    let mut out = vec![0.0; x.dim()];
    for (c, w) in components.iter().zip(w) {
        let post = gaussian_posterior(x, &c.mean, c.scale, sigma);
        out.iter_mut().zip(post.iter()).for_each(|(o, p)| *o += w * p);
    }
    StyleVector(out)
}

/// A frozen set of `(clean, sigma, noise, weight)` draws for the denoising
/// objective, so several denoisers can be compared on identical draws.
#[derive(Debug, Clone)]
pub struct EdmDraws {
    clean: Vec<StyleVector>,
    sigma: Vec<f64>,
    noise: Vec<StyleVector>,
    weight: Vec<f64>,
}

impl EdmDraws {
    /// Draws with `ln sigma ~ N(p_mean, p_std^2)` and per-draw weight
    /// `lambda(sigma)`.
    pub fn log_normal<R: Rng + ?Sized>(
        data: &[StyleVector],
        dist: &TrainingSigmaDist,
        n_draws: usize,
        sigma_data: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_data(data)?;
        dist.validate()?;
        Self::build(data, n_draws, rng, |rng| {
            let sigma = dist.sample(rng);
            Ok((sigma, loss_weight(sigma, sigma_data)?))
        })
    }

    /// Draws with `sigma` log-uniform on `[lo, hi]`, weighted by `lambda` at
    /// the geometric midpoint of the range.
    pub fn log_uniform<R: Rng + ?Sized>(
        data: &[StyleVector],
        lo: f64,
        hi: f64,
        n_draws: usize,
        sigma_data: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_data(data)?;
        if !(lo > 0.0 && lo < hi) {
            return Err(domain(format!("invalid sigma range [{lo}, {hi}]")));
        }
        let weight = loss_weight((lo * hi).sqrt(), sigma_data)?;
        let (a, b) = (lo.ln(), hi.ln());
        Self::build(data, n_draws, rng, |rng| {
            Ok((rng.random_range(a..=b).exp(), weight))
        })
    }

    fn build<R, F>(data: &[StyleVector], n_draws: usize, rng: &mut R, mut level: F) -> Result<Self>
    where
        R: Rng + ?Sized,
        F: FnMut(&mut R) -> Result<(f64, f64)>,
    {
        if n_draws == 0 {
            return Err(domain("n_draws must be at least 1"));
        }
        let dim = data[0].dim();
        let mut out = Self {
            clean: Vec::with_capacity(n_draws),
            sigma: Vec::with_capacity(n_draws),
            noise: Vec::with_capacity(n_draws),
            weight: Vec::with_capacity(n_draws),
        };
        for _ in 0..n_draws {
            let idx = rng.random_range(0..data.len());
            let (sigma, weight) = level(rng)?;
            out.clean.push(data[idx].clone());
            out.sigma.push(sigma);
            out.noise.push(StyleVector(normal_vec(rng, dim)));
            out.weight.push(weight);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// Mean of `weight * |K(clean + sigma * noise; sigma) - clean|^2`.
    pub fn loss(&self, spec: &DenoiserSpec) -> Result<f64> {
        let cond = ConditioningVector::none();
        let mut total = 0.0;
        for i in 0..self.len() {
            let noisy = self.clean[i].axpy(self.sigma[i], &self.noise[i]);
            let den = spec.denoise(&noisy, self.sigma[i], &cond)?;
            let err: f64 = den
                .iter()
                .zip(self.clean[i].iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += self.weight[i] * err;
        }
        Ok(total / self.len() as f64)
    }
}

fn check_data(data: &[StyleVector]) -> Result<()> {
    let Some(first) = data.first() else {
        return Err(domain("data set is empty"));
    };
    for v in data {
        v.check_dim(first.dim())?;
    }
    Ok(())
}

/// Monte-Carlo estimate of the weighted denoising objective.
pub fn edm_loss<R: Rng + ?Sized>(
    spec: &DenoiserSpec,
    data: &[StyleVector],
    dist: &TrainingSigmaDist,
    n_draws: usize,
    sigma_data: f64,
    rng: &mut R,
) -> Result<f64> {
    EdmDraws::log_normal(data, dist, n_draws, sigma_data, rng)?.loss(spec)
}

/// Fits `(gain, offset)` per noise bucket by least squares on the denoising
/// objective. Buckets are `(lo, hi)` ranges, ordered and non-overlapping.
pub fn fit_linear_denoiser<R: Rng + ?Sized>(
    data: &[StyleVector],
    sigma_buckets: &[(f64, f64)],
    n_draws: usize,
    sigma_data: f64,
    space: FitSpace,
    rng: &mut R,
) -> Result<DenoiserSpec> {
    check_data(data)?;
    let dim = data[0].dim();
    if data.len() < 2 * dim {
        return Err(domain(format!(
            "need at least {} samples to fit a {dim}-dimensional denoiser, got {}",
            2 * dim,
            data.len()
        )));
    }
    if sigma_buckets.is_empty() {
        return Err(domain("no sigma buckets given"));
    }
    let mut buckets = Vec::with_capacity(sigma_buckets.len());
    for (index, &(lo, hi)) in sigma_buckets.iter().enumerate() {
        let draws = EdmDraws::log_uniform(data, lo, hi, n_draws, sigma_data, rng)?;
        let (gain, offset) = regress_bucket(&draws, sigma_data, space, index)?;
        buckets.push(LinearBucket { lo, hi, gain, offset });
    }
    DenoiserSpec::linear(LinearFit {
        sigma_data,
        space,
        buckets,
    })
}

/// Closed-form minimizer of `sum |gain * u + offset - target|^2` over a
/// scalar gain and vector offset.
fn regress_bucket(
    draws: &EdmDraws,
    sigma_data: f64,
    space: FitSpace,
    bucket: usize,
) -> Result<(f64, Vec<f64>)> {
    let dim = draws.clean[0].dim();
    let n = draws.len() as f64;
    let mut s_uu = 0.0;
    let mut s_ut = 0.0;
    let mut s_u = vec![0.0; dim];
    let mut s_t = vec![0.0; dim];
    for i in 0..draws.len() {
        let sigma = draws.sigma[i];
        let noisy = draws.clean[i].axpy(sigma, &draws.noise[i]);
        let (input, target): (Vec<f64>, Vec<f64>) = match space {
            FitSpace::Denoiser => (noisy.0, draws.clean[i].0.clone()),
            FitSpace::Network => {
                let p = precondition(sigma, sigma_data)?;
                noisy
                    .iter()
                    .zip(draws.clean[i].iter())
                    .map(|(x, y)| (p.c_in * x, (y - p.c_skip * x) / p.c_out))
                    .unzip()
            }
        };
        for k in 0..dim {
            s_uu += input[k] * input[k];
            s_ut += input[k] * target[k];
            s_u[k] += input[k];
            s_t[k] += target[k];
        }
    }
    let centered_uu = s_uu - s_u.iter().map(|v| v * v).sum::<f64>() / n;
    let centered_ut = s_ut - s_u.iter().zip(&s_t).map(|(a, b)| a * b).sum::<f64>() / n;
    if !(centered_uu > 1e-12 * s_uu.max(f64::MIN_POSITIVE)) || !centered_uu.is_finite() {
        return Err(Error::Singular { bucket });
    }
    let gain = centered_ut / centered_uu;
    let offset = s_t
        .iter()
        .zip(&s_u)
        .map(|(t, u)| (t - gain * u) / n)
        .collect();
    Ok((gain, offset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sv(v: &[f64]) -> StyleVector {
        StyleVector::new(v.to_vec())
    }

    fn none() -> ConditioningVector {
        ConditioningVector::none()
    }

    fn two_modes(w0: f64, scale: f64) -> DenoiserSpec {
        DenoiserSpec::mixture(vec![
            MixtureComponent { weight: w0, mean: sv(&[-1.0]), scale },
            MixtureComponent { weight: 1.0 - w0, mean: sv(&[1.0]), scale },
        ])
        .unwrap()
    }

    /// E[x0 | x] for x0 ~ N(mu, s^2), x = x0 + sigma * n, by trapezoidal
    /// quadrature over x0.
    fn posterior_mean_quadrature(mu: f64, s: f64, sigma: f64, x: f64) -> f64 {
        let (lo, hi, n) = (mu - 12.0 * s, mu + 12.0 * s, 200_000);
        let h = (hi - lo) / n as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..=n {
            let x0 = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            let p = (-(x0 - mu).powi(2) / (2.0 * s * s) - (x - x0).powi(2) / (2.0 * sigma * sigma)).exp();
            num += w * x0 * p;
            den += w * p;
        }
        num / den
    }

    #[test]
    fn gaussian_posterior_mean_matches_quadrature() {
        assert_relative_eq!(posterior_mean_quadrature(0.0, 1.0, 1.0, 2.0), 1.0, max_relative = 1e-9);
        let spec = DenoiserSpec::gaussian(sv(&[0.0]), 1.0).unwrap();
        let out = spec.denoise(&sv(&[2.0]), 1.0, &none()).unwrap();
        assert_relative_eq!(out[0], 1.0, max_relative = 1e-15);

        let spec = DenoiserSpec::gaussian(sv(&[0.3]), 0.7).unwrap();
        for (sigma, x) in [(0.2, -0.5), (1.5, 2.0), (0.05, 0.31)] {
            let got = spec.denoise(&sv(&[x]), sigma, &none()).unwrap()[0];
            assert_relative_eq!(got, posterior_mean_quadrature(0.3, 0.7, sigma, x), max_relative = 1e-8);
        }
    }

    #[test]
    fn gaussian_zero_noise_is_identity() {
        let spec = DenoiserSpec::gaussian(sv(&[0.5, -0.5]), 0.2).unwrap();
        let x = sv(&[1.3, 2.0]);
        let out = spec.denoise(&x, 1e-9, &none()).unwrap();
        for (a, b) in out.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_large_noise_tends_to_mean() {
        let s = 0.3;
        let spec = DenoiserSpec::gaussian(sv(&[0.4]), s).unwrap();
        for sigma in [10.0, 100.0, 1000.0] {
            let out = spec.denoise(&sv(&[5.0]), sigma, &none()).unwrap();
            assert!((out[0] - 0.4).abs() <= 5.0 * s * s / (sigma * sigma));
        }
    }

    #[test]
    fn symmetric_mixture_midpoint() {
        let spec = two_modes(0.5, 0.3);
        let out = spec.denoise(&sv(&[0.0]), 0.7, &none()).unwrap();
        assert_eq!(out[0], 0.0);
        let score = spec.score(&sv(&[0.0]), 0.7).unwrap();
        assert_eq!(score[0], 0.0);
    }

    #[test]
    fn single_component_mixture_equals_gaussian() {
        let mean = sv(&[0.2, -0.1, 0.5]);
        let g = DenoiserSpec::gaussian(mean.clone(), 0.4).unwrap();
        let m = DenoiserSpec::mixture(vec![MixtureComponent { weight: 1.0, mean, scale: 0.4 }]).unwrap();
        for sigma in [1e-3, 0.2, 3.0] {
            let x = sv(&[1.0, 2.0, -3.0]);
            assert_eq!(
                g.denoise(&x, sigma, &none()).unwrap(),
                m.denoise(&x, sigma, &none()).unwrap()
            );
        }
    }

    #[test]
    fn gaussian_score_stationary_at_mean() {
        let spec = DenoiserSpec::gaussian(sv(&[0.1, 0.2]), 0.5).unwrap();
        let s = spec.score(&sv(&[0.1, 0.2]), 0.3).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn validation_errors() {
        assert!(DenoiserSpec::gaussian(sv(&[0.0]), 0.0).is_err());
        assert!(DenoiserSpec::mixture(vec![]).is_err());
        assert!(DenoiserSpec::mixture(vec![
            MixtureComponent { weight: 0.3, mean: sv(&[0.0]), scale: 1.0 },
            MixtureComponent { weight: 0.6, mean: sv(&[1.0]), scale: 1.0 },
        ])
        .is_err());
        let spec = DenoiserSpec::gaussian(sv(&[0.0, 0.0]), 1.0).unwrap();
        assert!(matches!(spec.denoise(&sv(&[1.0]), 1.0, &none()), Err(Error::Shape(_))));
        assert!(matches!(spec.denoise(&sv(&[1.0, 0.0]), 0.0, &none()), Err(Error::Domain(_))));
    }

    #[test]
    fn linear_fit_json_layout_and_coverage() {
        let fit = LinearFit {
            sigma_data: 0.2,
            space: FitSpace::Denoiser,
            buckets: vec![
                LinearBucket { lo: 0.1, hi: 0.2, gain: 0.5, offset: vec![0.0, 1.0] },
                LinearBucket { lo: 0.2, hi: 0.4, gain: 0.25, offset: vec![1.0, 0.0] },
            ],
        };
        let text = fit.to_json().unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<_> = value.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["buckets", "sigma_data"]);
        assert_eq!(value["buckets"][1]["offset"][0], 1.0);
        assert_eq!(LinearFit::from_json(&text).unwrap(), fit);

        let spec = DenoiserSpec::linear(fit).unwrap();
        let out = spec.denoise(&sv(&[2.0, 2.0]), 0.3, &none()).unwrap();
        assert_eq!(out.as_slice(), &[1.5, 0.5]);
        assert!(matches!(
            spec.denoise(&sv(&[2.0, 2.0]), 0.5, &none()),
            Err(Error::Coverage { .. })
        ));
    }

    #[test]
    fn overlapping_buckets_rejected() {
        let fit = LinearFit {
            sigma_data: 0.2,
            space: FitSpace::Denoiser,
            buckets: vec![
                LinearBucket { lo: 0.1, hi: 0.3, gain: 0.5, offset: vec![0.0] },
                LinearBucket { lo: 0.2, hi: 0.4, gain: 0.25, offset: vec![1.0] },
            ],
        };
        assert!(DenoiserSpec::linear(fit).is_err());
    }

    #[test]
    fn callable_receives_conditioning() {
        let spec = DenoiserSpec::callable(|x, _sigma, cond| {
            let shift = cond.as_slice().map_or(0.0, |c| c[0]);
            StyleVector::new(x.iter().map(|v| v + shift).collect())
        });
        let out = spec
            .denoise(&sv(&[1.0]), 0.5, &ConditioningVector::some(vec![2.0]))
            .unwrap();
        assert_eq!(out[0], 3.0);
    }

    fn gaussian_data(n: usize, dim: usize, s: f64, seed: u64) -> Vec<StyleVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| StyleVector::new(normal_vec(&mut rng, dim)).scaled(s))
            .collect()
    }

    #[test]
    fn bayes_denoiser_beats_perturbed_gain() {
        let s = 0.2;
        let data = gaussian_data(20_000, 4, s, 1);
        let dist = TrainingSigmaDist::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = EdmDraws::log_normal(&data, &dist, 100_000, 0.2, &mut rng).unwrap();
        let bayes = DenoiserSpec::gaussian(StyleVector::zeros(4), s).unwrap();
        let base = draws.loss(&bayes).unwrap();
        for delta in [-0.1, 0.1] {
            let inner = bayes.clone();
            let perturbed = DenoiserSpec::callable(move |x, sigma, c| {
                let d = inner.denoise(x, sigma, c).unwrap();
                d.axpy(delta, x)
            });
            assert!(draws.loss(&perturbed).unwrap() > base);
        }
    }

    #[test]
    fn identity_denoiser_loss() {
        let dim = 3;
        let data = gaussian_data(100, dim, 1.0, 3);
        let identity = DenoiserSpec::callable(|x, _, _| x.clone());
        let dist = TrainingSigmaDist { p_mean: -1.2, p_std: 0.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let loss = edm_loss(&identity, &data, &dist, 200_000, 0.2, &mut rng).unwrap();
        // E[lambda sigma^2] = 1 + E[sigma^2] / sigma_data^2, E[sigma^2] = exp(2 mu + 2 s^2).
        let expected = dim as f64 * (1.0 + (2.0f64 * -1.2 + 2.0 * 0.25).exp() / 0.04);
        assert_relative_eq!(loss, expected, max_relative = 0.03);

        let eps: f64 = 1e-6;
        let tiny = TrainingSigmaDist { p_mean: eps.ln(), p_std: 0.0 };
        let loss = edm_loss(&identity, &data, &tiny, 100_000, 0.2, &mut rng).unwrap();
        let plug_in = loss_weight(eps, 0.2).unwrap() * eps * eps * dim as f64;
        assert_relative_eq!(loss, plug_in, max_relative = 0.02);
    }

    #[test]
    fn empty_data_rejected() {
        let spec = DenoiserSpec::gaussian(sv(&[0.0]), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(edm_loss(&spec, &[], &TrainingSigmaDist::default(), 10, 0.2, &mut rng).is_err());
    }

    #[test]
    fn fit_recovers_bayes_gain() {
        let s = 0.5;
        let data = gaussian_data(50_000, 2, s, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let buckets = [(0.2, 0.21), (0.5, 0.52), (1.0, 1.04)];
        let spec = fit_linear_denoiser(&data, &buckets, 100_000, 0.2, FitSpace::Denoiser, &mut rng).unwrap();
        let DenoiserSpec::LinearFit(fit) = &spec else { unreachable!() };
        for b in &fit.buckets {
            let mid = b.sigma_mid();
            let expected = s * s / (s * s + mid * mid);
            assert_relative_eq!(b.gain, expected, max_relative = 1e-2);
            assert!(b.offset.iter().all(|o| o.abs() < 1e-2), "{:?}", b.offset);
        }
    }

    #[test]
    fn fit_constant_data() {
        let v = sv(&[0.3, -0.7]);
        let data = vec![v.clone(); 16];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = fit_linear_denoiser(&data, &[(0.1, 0.2)], 10_000, 0.2, FitSpace::Denoiser, &mut rng).unwrap();
        let DenoiserSpec::LinearFit(fit) = &spec else { unreachable!() };
        let b = &fit.buckets[0];
        assert!(b.gain.abs() < 1e-10, "gain {}", b.gain);
        for (o, t) in b.offset.iter().zip(v.iter()) {
            assert!((o - t).abs() < 1e-10);
        }
    }

    #[test]
    fn fit_in_network_space_matches_denoiser_space() {
        let s = 0.4;
        let data = gaussian_data(20_000, 2, s, 8);
        let buckets = [(0.3, 0.31)];
        let k = fit_linear_denoiser(&data, &buckets, 50_000, 0.2, FitSpace::Denoiser, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let v = fit_linear_denoiser(&data, &buckets, 50_000, 0.2, FitSpace::Network, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let x = sv(&[0.5, -0.2]);
        let a = k.denoise(&x, 0.305, &none()).unwrap();
        let b = v.denoise(&x, 0.305, &none()).unwrap();
        for (a, b) in a.iter().zip(b.iter()) {
            assert!((a - b).abs() < 5e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn fit_needs_enough_samples() {
        let data = gaussian_data(3, 2, 1.0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(fit_linear_denoiser(&data, &[(0.1, 0.2)], 100, 0.2, FitSpace::Denoiser, &mut rng).is_err());
    }

    #[test]
    fn perturbed_fit_increases_held_out_loss() {
        let s = 0.3;
        let data = gaussian_data(20_000, 3, s, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = fit_linear_denoiser(&data, &[(0.25, 0.27)], 50_000, 0.2, FitSpace::Denoiser, &mut rng).unwrap();
        let held_out = EdmDraws::log_uniform(&data, 0.25, 0.27, 50_000, 0.2, &mut rng).unwrap();
        let base = held_out.loss(&spec).unwrap();
        let DenoiserSpec::LinearFit(fit) = spec else { unreachable!() };
        for delta in [-0.05, 0.05] {
            let mut f = fit.clone();
            f.buckets[0].gain += delta;
            assert!(held_out.loss(&DenoiserSpec::linear(f).unwrap()).unwrap() > base);
        }
    }

    proptest! {
        #[test]
        fn gaussian_score_closed_form(
            x in proptest::collection::vec(-5.0f64..5.0, 3),
            mu in proptest::collection::vec(-2.0f64..2.0, 3),
            s in 0.05f64..2.0,
            sigma in 1e-3f64..10.0,
        ) {
            let spec = DenoiserSpec::gaussian(sv(&mu), s).unwrap();
            let xv = sv(&x);
            let score = spec.score(&xv, sigma).unwrap();
            let den = spec.denoise(&xv, sigma, &none()).unwrap();
            for k in 0..3 {
                let closed = -(x[k] - mu[k]) / (s * s + sigma * sigma);
                prop_assert!((score[k] - closed).abs() <= 1e-10 * closed.abs().max(1.0));
                let back = score[k] * sigma * sigma + x[k];
                prop_assert!((back - den[k]).abs() <= 1e-12 * den[k].abs().max(1.0));
            }
        }

        #[test]
        fn mixture_score_consistency(
            x in -4.0f64..4.0,
            w in 0.05f64..0.95,
            sigma in 1e-3f64..5.0,
        ) {
            let spec = two_modes(w, 0.2);
            let xv = sv(&[x]);
            let den = spec.denoise(&xv, sigma, &none()).unwrap();
            let score = spec.score(&xv, sigma).unwrap();
            prop_assert!((score[0] * sigma * sigma + x - den[0]).abs() <= 1e-12 * den[0].abs().max(1.0));
        }
    }
}
