//! Diversity and distribution-distance metrics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::StyleVector;
use crate::duration::Alignment;
use crate::error::{domain, shape, Error, Result};
use crate::sampler::coordinate_moments;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub details: Option<BTreeMap<String, f64>>,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(domain("metric report needs n >= 1"));
        }
        if !value.is_finite() {
            return Err(Error::UndefinedMetric(format!("value {value}")));
        }
        Ok(Self {
            name: name.into(),
            value,
            n,
            details: None,
        })
    }

    pub fn with_detail(mut self, key: impl Into<String>, value: f64) -> Self {
        self.details.get_or_insert_with(BTreeMap::new).insert(key.into(), value);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Population standard deviation divided by the mean.
pub fn coefficient_of_variation(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::UndefinedMetric("empty sequence".into()));
    }
    let n = xs.len() as f64;
    let rough = xs.iter().sum::<f64>() / n;
    let mean = rough + xs.iter().map(|x| x - rough).sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::UndefinedMetric("zero mean".into()));
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(var.sqrt() / mean.abs())
}

/// V-statistic `2 E|a - b| - E|a - a'| - E|b - b'|`.
pub fn energy_distance(a: &[StyleVector], b: &[StyleVector]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(shape("energy distance needs non-empty sample sets"));
    }
    let dim = a[0].dim();
    if a.iter().chain(b).any(|x| x.dim() != dim) {
        return Err(shape("sample sets have mixed dimensions"));
    }
    let ab = mean_pairwise(a, b);
    let aa = mean_pairwise(a, a);
    let bb = mean_pairwise(b, b);
    Ok(2.0 * ab - aa - bb)
}

fn mean_pairwise(a: &[StyleVector], b: &[StyleVector]) -> f64 {
    let row_sums: Vec<f64> = a
        .par_iter()
        .map(|x| b.iter().map(|y| x.distance(y)).sum::<f64>())
        .collect();
    row_sums.iter().sum::<f64>() / (a.len() as f64 * b.len() as f64)
}

/// Relative errors of the sample mean and per-coordinate std.
///
/// `value` is the largest relative std error. Mean errors are taken relative
/// to `max(|target_mean|, target_std)` so zero-mean targets stay defined.
pub fn moment_report(
    samples: &[StyleVector],
    target_mean: &[f64],
    target_std: &[f64],
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(shape("moment report needs samples"));
    }
    let dim = samples[0].dim();
    if target_mean.len() != dim || target_std.len() != dim {
        return Err(shape(format!(
            "targets have lengths {}/{}, samples have dimension {dim}",
            target_mean.len(),
            target_std.len()
        )));
    }
    if samples.iter().any(|s| s.dim() != dim) {
        return Err(shape("samples have mixed dimensions"));
    }
    if let Some(s) = target_std.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(domain(format!("target std must be positive, got {s}")));
    }
    let (mean, std) = coordinate_moments(samples);
    let mean_err = mean
        .iter()
        .zip(target_mean.iter().zip(target_std))
        .map(|(m, (t, s))| (m - t).abs() / t.abs().max(*s))
        .fold(0.0, f64::max);
    let std_err = std
        .iter()
        .zip(target_std)
        .map(|(s, t)| (s - t).abs() / t)
        .fold(0.0, f64::max);
    let mut report = MetricReport::new("moment_error", std_err, samples.len())?
        .with_detail("max_rel_mean_error", mean_err)
        .with_detail("max_rel_std_error", std_err);
    for (j, (m, s)) in mean.iter().zip(&std).enumerate() {
        report = report
            .with_detail(format!("mean_{j}"), *m)
            .with_detail(format!("std_{j}"), *s);
    }
    Ok(report)
}

/// Mean absolute entrywise difference, the shorter alignment padded with
/// zero rows.
pub fn alignment_distortion(a: &Alignment, b: &Alignment) -> Result<f64> {
    if a.phonemes() != b.phonemes() {
        return Err(shape(format!(
            "alignments have {} and {} columns",
            a.phonemes(),
            b.phonemes()
        )));
    }
    let rows = a.frames().max(b.frames());
    let cols = a.phonemes();
    if rows == 0 || cols == 0 {
        return Err(shape("empty alignment"));
    }
    let at = |m: &Alignment, n: usize, i: usize| if n < m.frames() { m.a[[n, i]] } else { 0.0 };
    let mut total = 0.0;
    for n in 0..rows {
        for i in 0..cols {
            total += (at(a, n, i) - at(b, n, i)).abs();
        }
    }
    Ok(total / (rows * cols) as f64)
}

fn nearest(x: &StyleVector, means: &[StyleVector]) -> usize {
    means
        .iter()
        .enumerate()
        .map(|(j, m)| (j, x.distance(m)))
        .fold((0, f64::INFINITY), |best, (j, d)| if d < best.1 { (j, d) } else { best })
        .0
}

/// Fraction of samples whose nearest mean is each entry of `means`.
pub fn nearest_mode_weights(samples: &[StyleVector], means: &[StyleVector]) -> Vec<f64> {
    let mut counts = vec![0usize; means.len()];
    if means.is_empty() {
        return Vec::new();
    }
    for s in samples {
        counts[nearest(s, means)] += 1;
    }
    let n = samples.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Per mode, the CV of `||x||` over samples assigned to it; `None` when the
/// mode is empty or the CV is undefined.
pub fn mode_spread_cv(samples: &[StyleVector], means: &[StyleVector]) -> Vec<Option<f64>> {
    let mut groups = vec![Vec::new(); means.len()];
    if means.is_empty() {
        return Vec::new();
    }
    for s in samples {
        groups[nearest(s, means)].push(s.norm());
    }
    groups
        .iter()
        .map(|g| coefficient_of_variation(g).ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duration::{hard_upsample, AlignmentKind, Durations};
    use crate::rng::{normal_vec, stream};
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(seed: u64, n: usize, dim: usize, shift: f64) -> Vec<StyleVector> {
        let mut rng = stream(seed, 0, 0);
        (0..n)
            .map(|_| {
                let mut v = normal_vec(&mut rng, dim);
                v.iter_mut().for_each(|x| *x += shift);
                StyleVector::new(v)
            })
            .collect()
    }

    #[test]
    fn cv_examples() {
        assert_eq!(coefficient_of_variation(&[4.0, 4.0, 4.0]).unwrap(), 0.0);
        assert_eq!(coefficient_of_variation(&[1.0, 3.0]).unwrap(), 0.5);
        assert!(matches!(coefficient_of_variation(&[-1.0, 1.0]), Err(Error::UndefinedMetric(_))));
        assert!(coefficient_of_variation(&[]).is_err());
    }

    #[test]
    fn cv_of_repeated_deterministic_output_is_zero() {
        let x = 0.123_456_789_f64;
        let xs = vec![x; 1000];
        assert!(coefficient_of_variation(&xs).unwrap() < 1e-15);
    }

    #[test]
    fn energy_distance_identity_and_separation() {
        let a = cloud(1, 300, 2, 0.0);
        assert!(energy_distance(&a, &a).unwrap().abs() < 1e-12);
        let near = cloud(2, 300, 2, 0.0);
        let far = cloud(3, 300, 2, 3.0);
        assert!(energy_distance(&a, &far).unwrap() > energy_distance(&a, &near).unwrap());
        let bad = vec![StyleVector::new(vec![1.0])];
        assert!(energy_distance(&a, &bad).is_err());
    }

    #[test]
    fn energy_distance_large_samples_1d() {
        let a = cloud(4, 10_000, 1, 0.0);
        let same = cloud(5, 10_000, 1, 0.0);
        let shifted = cloud(6, 10_000, 1, 3.0);
        let close = energy_distance(&a, &same).unwrap();
        let apart = energy_distance(&a, &shifted).unwrap();
        assert!(apart > close);
        // closed form for N(0,1) vs N(3,1): 2E|Z√2 + 3| - 2E|Z√2|
        let expected = {
            let s = 2.0f64.sqrt();
            let mu = 3.0;
            let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let cdf = |z: f64| 0.5 * (1.0 + erf(z / 2.0f64.sqrt()));
            let folded = s * 2.0 * phi(mu / s) + mu * (1.0 - 2.0 * cdf(-mu / s));
            2.0 * folded - 2.0 * s * (2.0 / std::f64::consts::PI).sqrt()
        };
        assert!((apart - expected).abs() < 0.05, "{apart} vs {expected}");
    }

    fn erf(x: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26, |error| < 1.5e-7
        let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
        let poly = t
            * (0.254_829_592
                + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
        let y = 1.0 - poly * (-x * x).exp();
        if x >= 0.0 {
            y
        } else {
            -y
        }
    }

    #[test]
    fn energy_distance_is_order_independent() {
        let a = cloud(7, 500, 3, 0.0);
        let b = cloud(8, 400, 3, 0.5);
        let first = energy_distance(&a, &b).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(|| energy_distance(&a, &b).unwrap());
        assert_eq!(first.to_bits(), single.to_bits());
    }

    #[test]
    fn moment_report_examples() {
        let samples = vec![StyleVector::new(vec![1.0, -2.0]); 5];
        let r = moment_report(&samples, &[1.0, -2.0], &[0.5, 0.5]).unwrap();
        assert_eq!(r.details.as_ref().unwrap()["max_rel_mean_error"], 0.0);
        assert_eq!(r.n, 5);
        assert!(moment_report(&samples, &[1.0, -2.0], &[]).is_err());
        assert!(moment_report(&samples, &[1.0, -2.0], &[0.5, 0.0]).is_err());
        let json = r.to_json().unwrap();
        assert!(json.starts_with("{\"name\":\"moment_error\""));
    }

    #[test]
    fn moment_report_on_target_draws() {
        let n = 10_000;
        let samples: Vec<StyleVector> = cloud(9, n, 3, 0.0)
            .into_iter()
            .map(|s| s.scaled(0.2))
            .collect();
        let r = moment_report(&samples, &[0.0; 3], &[0.2; 3]).unwrap();
        assert!(r.value < 3.0 / (n as f64).sqrt(), "{}", r.value);
    }

    #[test]
    fn distortion_examples() {
        let hard = hard_upsample(&Durations::from_frames(&[2, 1]).unwrap()).unwrap();
        assert_eq!(alignment_distortion(&hard, &hard).unwrap(), 0.0);
        let longer = hard_upsample(&Durations::from_frames(&[2, 2]).unwrap()).unwrap();
        // one extra row of mass 1 over 4 x 2 entries
        assert_eq!(alignment_distortion(&hard, &longer).unwrap(), 1.0 / 8.0);
        assert_eq!(
            alignment_distortion(&longer, &hard).unwrap(),
            alignment_distortion(&hard, &longer).unwrap()
        );
        let three = hard_upsample(&Durations::from_frames(&[1, 1, 1]).unwrap()).unwrap();
        assert!(alignment_distortion(&hard, &three).is_err());
    }

    #[test]
    fn mode_helpers() {
        let means = [StyleVector::new(vec![-1.0]), StyleVector::new(vec![1.0])];
        let samples: Vec<StyleVector> = [-1.1, -0.9, 0.8, 1.0, 1.2]
            .iter()
            .map(|v| StyleVector::new(vec![*v]))
            .collect();
        assert_eq!(nearest_mode_weights(&samples, &means), [0.4, 0.6]);
        let cv = mode_spread_cv(&samples, &means);
        assert!((cv[0].unwrap() - 0.1).abs() < 1e-12);
        let cv = mode_spread_cv(&samples[..2], &means);
        assert!(cv[1].is_none());
    }

    fn random_alignment(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Alignment {
        let a = Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.0..1.0));
        Alignment { a, kind: AlignmentKind::Soft }
    }

    #[test]
    fn distortion_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let cols = rng.random_range(1..5);
            let rows = rng.random_range(1..7);
            let x = random_alignment(&mut rng, rows, cols);
            let rows = rng.random_range(1..7);
            let y = random_alignment(&mut rng, rows, cols);
            let rows = rng.random_range(1..7);
            let z = random_alignment(&mut rng, rows, cols);
            let d = |p: &Alignment, q: &Alignment| {
                // common padding so the three distances share a denominator
                let rows = x.frames().max(y.frames()).max(z.frames());
                alignment_distortion(p, q).unwrap() * (p.frames().max(q.frames()) * cols) as f64
                    / (rows * cols) as f64
            };
            assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-12);
        }
        let one = Alignment { a: array![[1.0]], kind: AlignmentKind::Soft };
        assert_eq!(alignment_distortion(&one, &one).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn energy_distance_symmetric_nonnegative(seed in 0u64..100_000, n in 1usize..40, m in 1usize..40) {
            let a = cloud(seed, n, 2, 0.0);
            let b = cloud(seed + 1_000_000, m, 2, 0.3);
            let ab = energy_distance(&a, &b).unwrap();
            let ba = energy_distance(&b, &a).unwrap();
            prop_assert!(ab >= -1e-12);
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
        }

        #[test]
        fn cv_scale_invariant(
            xs in proptest::collection::vec(0.1f64..100.0, 1..50),
            c in 1e-3f64..1e3,
        ) {
            let scaled: Vec<f64> = xs.iter().map(|x| c * x).collect();
            let a = coefficient_of_variation(&xs).unwrap();
            let b = coefficient_of_variation(&scaled).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn distortion_symmetric(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_alignment(&mut rng, 3, 2);
            let y = random_alignment(&mut rng, 5, 2);
            prop_assert_eq!(alignment_distortion(&x, &y).unwrap(), alignment_distortion(&y, &x).unwrap());
        }
    }
}
