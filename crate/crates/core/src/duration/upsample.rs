use ndarray::Array2;

use super::losses::{frame_count, predicted_durations};
use super::{Alignment, AlignmentKind, DurationProbMatrix, Durations, KernelParams};
use crate::error::{Error, Result};

/// Unnormalized Gaussian kernel `exp(-(x - c)^2 / (2 sigma^2))`.
pub fn gaussian_kernel(x: f64, center: f64, sigma: f64) -> f64 {
    let z = (x - center) / sigma;
    (-0.5 * z * z).exp()
}

/// Repeats a one for `d[i]` frames per phoneme.
pub fn hard_upsample(d: &Durations) -> Result<Alignment> {
    let frames = d.frames()?;
    let total: usize = frames.iter().sum();
    let mut a = Array2::zeros((total, frames.len()));
    let mut row = 0;
    for (i, &len) in frames.iter().enumerate() {
        for r in row..row + len {
            a[[r, i]] = 1.0;
        }
        row += len;
    }
    Ok(Alignment {
        a,
        kind: AlignmentKind::Hard,
    })
}

/// Fixed-width Gaussian upsampling: kernels centred at `l_i - d_i / 2`,
/// rows normalized to sum to one.
pub fn gaussian_upsample(d: &Durations, kp: &KernelParams) -> Result<Alignment> {
    kp.validate()?;
    let ends = d.ends();
    let centers: Vec<f64> = ends.iter().zip(d.values()).map(|(l, d)| l - 0.5 * d).collect();
    let frames = frame_count(*ends.last().unwrap());
    let n = centers.len();
    let inv = 1.0 / (2.0 * kp.sigma_u * kp.sigma_u);
    let mut a = Array2::zeros((frames, n));
    for (r, mut row) in a.rows_mut().into_iter().enumerate() {
        let t = (r + 1) as f64;
        // log-domain ratio normalization; far rows would underflow otherwise
        let logs: Vec<f64> = centers.iter().map(|c| -(t - c) * (t - c) * inv).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        for (v, l) in row.iter_mut().zip(&logs) {
            *v = (l - max).exp() / total;
        }
    }
    Ok(Alignment {
        a,
        kind: AlignmentKind::Soft,
    })
}

/// Differentiable upsampling of a duration-probability matrix.
///
/// `f[n, i] = sum_k q[k, i] * N(n - k; l_{i-1}, sigma_u)` over `k = 1..L`,
/// `n = 1..ceil(l_N)`, followed by a softmax over phonemes.
pub fn diff_upsample(q: &DurationProbMatrix, kp: &KernelParams) -> Result<Alignment> {
    let frames = predicted_durations(q).frames;
    if frames < 1 {
        let total = predicted_durations(q).total();
        return Err(Error::DegenerateDuration { total });
    }
    diff_upsample_with_frames(q, kp, frames)
}

/// [`diff_upsample`] with the frame count held fixed.
pub fn diff_upsample_with_frames(
    q: &DurationProbMatrix,
    kp: &KernelParams,
    frames: usize,
) -> Result<Alignment> {
    kp.validate()?;
    let logits = convolved(q.view(), kp.sigma_u, frames);
    Ok(Alignment {
        a: softmax_rows(&logits),
        kind: AlignmentKind::Soft,
    })
}

/// The pre-normalization buffer `f[n, i]` for a raw (unvalidated) `q`.
pub(super) fn convolved(q: &Array2<f64>, sigma_u: f64, frames: usize) -> Array2<f64> {
    let (max_duration, phonemes) = q.dim();
    let starts = phoneme_starts(q);
    let mut f = Array2::zeros((frames, phonemes));
    for i in 0..phonemes {
        for n in 0..frames {
            let mut acc = 0.0;
            for k in 0..max_duration {
                // 1-based offset (n + 1) - (k + 1)
                acc += q[[k, i]] * gaussian_kernel(n as f64 - k as f64, starts[i], sigma_u);
            }
            f[[n, i]] = acc;
        }
    }
    f
}

/// `l_{i-1}` for each phoneme, with `l_0 = 0`.
pub(super) fn phoneme_starts(q: &Array2<f64>) -> Vec<f64> {
    let mut acc = 0.0;
    q.columns()
        .into_iter()
        .map(|c| {
            let s = acc;
            acc += c.sum();
            s
        })
        .collect()
}

pub(super) fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duration::duration_targets;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kp(sigma_u: f64) -> KernelParams {
        KernelParams::new(sigma_u).unwrap()
    }

    fn hard_q(frames: &[usize], max_duration: usize) -> DurationProbMatrix {
        let d = Durations::from_frames(frames).unwrap();
        DurationProbMatrix::new(duration_targets(&d, max_duration).unwrap()).unwrap()
    }

    #[test]
    fn hard_by_hand() {
        let a = hard_upsample(&Durations::from_frames(&[2, 3, 1]).unwrap()).unwrap();
        let expected = array![
            [1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0]
        ];
        assert_eq!(a.a, expected);
        a.validate().unwrap();
        let one = hard_upsample(&Durations::from_frames(&[1]).unwrap()).unwrap();
        assert_eq!(one.a, array![[1.0]]);
        assert!(hard_upsample(&Durations::new(vec![1.5]).unwrap()).is_err());
    }

    #[test]
    fn gaussian_single_phoneme() {
        let a = gaussian_upsample(&Durations::from_frames(&[2]).unwrap(), &kp(1.5)).unwrap();
        assert_eq!(a.a, array![[1.0], [1.0]]);
    }

    #[test]
    fn gaussian_two_phonemes_by_hand() {
        let a = gaussian_upsample(&Durations::from_frames(&[2, 2]).unwrap(), &kp(1.5)).unwrap();
        let w = (-4.0f64 / 4.5).exp();
        assert!((w - 0.411_112).abs() < 1e-6);
        assert!((a.a[[0, 0]] - 1.0 / (1.0 + w)).abs() < 1e-15);
        assert!((a.a[[0, 0]] - 0.7087).abs() < 1e-4);
        assert!((a.a[[0, 1]] - 0.2913).abs() < 1e-4);
        assert_eq!(a.frames(), 4);
    }

    #[test]
    fn diff_single_phoneme() {
        let q = DurationProbMatrix::new(array![[1.0], [1.0]]).unwrap();
        let f = convolved(q.view(), 1.5, 2);
        assert!((f[[0, 0]] - (1.0 + (-1.0f64 / 4.5).exp())).abs() < 1e-15);
        assert!((f[[0, 0]] - 1.800_737).abs() < 1e-6);
        let a = diff_upsample(&q, &kp(1.5)).unwrap();
        assert_eq!(a.frames(), 2);
        assert!(a.a.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn diff_concentrated_kernel_recovers_hard() {
        let frames = [2, 3, 1];
        let soft = diff_upsample(&hard_q(&frames, 5), &kp(0.05)).unwrap();
        let hard = hard_upsample(&Durations::from_frames(&frames).unwrap()).unwrap();
        assert_eq!(soft.argmax(), hard.argmax());
    }

    #[test]
    fn degenerate_q_rejected() {
        let q = DurationProbMatrix::new(array![[0.0, 0.0]]).unwrap();
        assert!(matches!(diff_upsample(&q, &kp(1.5)), Err(Error::DegenerateDuration { .. })));
    }

    #[test]
    fn argmax_agreement_on_hard_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for sigma_u in [0.05, 0.5, 1.0, 1.5] {
            let (mut agree, mut total) = (0usize, 0usize);
            for _ in 0..100 {
                let n = rng.random_range(2..=8);
                let frames: Vec<usize> = (0..n).map(|_| rng.random_range(1..=6)).collect();
                let soft = diff_upsample(&hard_q(&frames, 16), &kp(sigma_u)).unwrap();
                let hard = hard_upsample(&Durations::from_frames(&frames).unwrap()).unwrap();
                agree += soft.argmax().iter().zip(hard.argmax()).filter(|(a, b)| **a == *b).count();
                total += hard.frames();
            }
            let rate = agree as f64 / total as f64;
            assert!(rate >= 0.95, "sigma_u {sigma_u}: {rate}");
        }
    }

    proptest! {
        #[test]
        fn soft_rows_sum_to_one(
            cols in proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, 6), 1..6),
            sigma_u in 0.05f64..8.0,
        ) {
            let n = cols.len();
            let q = Array2::from_shape_fn((6, n), |(k, i)| cols[i][k]);
            prop_assume!(q.sum() > 0.0);
            let q = DurationProbMatrix::new(q).unwrap();
            let a = diff_upsample(&q, &kp(sigma_u)).unwrap();
            prop_assert_eq!(a.frames(), predicted_durations(&q).frames);
            prop_assert_eq!(a.phonemes(), n);
            for row in a.a.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn gaussian_rows_sum_to_one(
            d in proptest::collection::vec(0.2f64..10.0, 1..8),
            sigma_u in 0.05f64..8.0,
        ) {
            let a = gaussian_upsample(&Durations::new(d).unwrap(), &kp(sigma_u)).unwrap();
            for row in a.a.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn hard_column_sums(frames in proptest::collection::vec(1usize..12, 1..10)) {
            let a = hard_upsample(&Durations::from_frames(&frames).unwrap()).unwrap();
            prop_assert_eq!(a.frames(), frames.iter().sum::<usize>());
            for (col, &d) in a.a.columns().into_iter().zip(&frames) {
                prop_assert_eq!(col.sum(), d as f64);
            }
            prop_assert!(a.validate().is_ok());
        }
    }
}
