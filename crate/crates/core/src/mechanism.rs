//! Laplace noise calibration and count-stream release.
//!
//! The released value of each cell is the true count plus i.i.d. Laplace
//! noise with scale `lambda = scale_multiplier * sensitivity / budget`
//! (the multiplier applies only in `temporal_dp` mode). Sampling inverts
//! the Laplace CDF on a uniform draw `u` from (-1/2, 1/2):
//!
//! ```text
//! noise = -lambda * sign(u) * ln(1 - 2|u|)
//! ```
//!
//! All draws come from a ChaCha stream over cells in row-major order, so a
//! release is a pure function of `(true stream, params, seed)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BudgetMode, CountStream, PrivacyParams, StreamKind};

/// Seed for one deterministic noise stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RandomSeed(pub u64);

/// Noise scale for one release under the given parameters.
pub fn laplace_scale(params: &PrivacyParams) -> f64 {
    let multiplier = match params.mode() {
        BudgetMode::PlainDp => 1.0,
        BudgetMode::TemporalDp => params.scale_multiplier(),
    };
    multiplier * params.sensitivity() / params.budget()
}

/// Inverse-CDF transform of a uniform draw `u` in (-1/2, 1/2) to a
/// Laplace(0, `lambda`) sample.
pub fn laplace_from_uniform(u: f64, lambda: f64) -> f64 {
    debug_assert!(u > -0.5 && u < 0.5, "uniform draw {u} outside (-1/2, 1/2)");
    -lambda * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// One Laplace(0, `lambda`) sample from `rng`.
pub fn sample_laplace<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> f64 {
    loop {
        // gen::<f64>() is in [0, 1); shift to [-1/2, 1/2) and reject the
        // single point where the transform diverges.
        let u = rng.gen::<f64>() - 0.5;
        if u > -0.5 {
            return laplace_from_uniform(u, lambda);
        }
    }
}

/// Releases a true count stream with fresh noise in every cell.
pub fn release_stream(
    true_counts: &CountStream,
    params: &PrivacyParams,
    seed: RandomSeed,
) -> Result<CountStream> {
    if true_counts.kind() != StreamKind::True {
        return Err(Error::InvalidValue(format!(
            "release needs a true stream, got {:?}",
            true_counts.kind()
        )));
    }
    let lambda = laplace_scale(params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.0);
    let values = true_counts
        .values()
        .iter()
        .map(|row| row.iter().map(|&v| v + sample_laplace(lambda, &mut rng)).collect())
        .collect();
    CountStream::new_noisy(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PrivacyParams;

    #[test]
    fn scale_follows_the_calibration_rule() {
        let p = PrivacyParams::plain(1.0, 0.5).unwrap();
        assert_eq!(laplace_scale(&p), 2.0);
        let p = PrivacyParams::plain(1.0, 0.2).unwrap();
        assert_eq!(laplace_scale(&p), 5.0);
        let p = PrivacyParams::new(2.0, 1.0, BudgetMode::TemporalDp, 1.5).unwrap();
        assert_eq!(laplace_scale(&p), 3.0);
        // The multiplier is inert outside temporal mode.
        let p = PrivacyParams::new(2.0, 1.0, BudgetMode::PlainDp, 1.5).unwrap();
        assert_eq!(laplace_scale(&p), 2.0);
    }

    #[test]
    fn inverse_cdf_hits_known_points() {
        use std::f64::consts::LN_2;
        assert!((laplace_from_uniform(0.25, 1.0) - LN_2).abs() < 1e-15);
        assert!((laplace_from_uniform(-0.25, 1.0) + LN_2).abs() < 1e-15);
        assert_eq!(laplace_from_uniform(0.0, 3.0), 0.0);
        assert!((laplace_from_uniform(0.25, 2.0) - 2.0 * LN_2).abs() < 1e-15);
    }

    fn stream_3x2() -> CountStream {
        CountStream::new_true(vec![vec![3.0, 1.0], vec![2.0, 2.0], vec![0.0, 4.0]]).unwrap()
    }

    #[test]
    fn release_is_deterministic_in_the_seed() {
        let p = PrivacyParams::plain(1.0, 1.0).unwrap();
        let a = release_stream(&stream_3x2(), &p, RandomSeed(9)).unwrap();
        let b = release_stream(&stream_3x2(), &p, RandomSeed(9)).unwrap();
        assert_eq!(a, b);
        let c = release_stream(&stream_3x2(), &p, RandomSeed(10)).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.kind(), StreamKind::Noisy);
        assert_eq!(a.t_len(), 3);
        assert_eq!(a.m(), 2);
    }

    #[test]
    fn release_rejects_non_true_streams() {
        let noisy = CountStream::new_noisy(vec![vec![1.0, 2.0]]).unwrap();
        let p = PrivacyParams::plain(1.0, 1.0).unwrap();
        assert!(release_stream(&noisy, &p, RandomSeed(0)).is_err());
    }

    #[test]
    fn enormous_budget_degenerates_to_the_input() {
        let p = PrivacyParams::plain(1.0, 1e12).unwrap();
        let noisy = release_stream(&stream_3x2(), &p, RandomSeed(4)).unwrap();
        for (nr, tr) in noisy.values().iter().zip(stream_3x2().values()) {
            for (a, b) in nr.iter().zip(tr.iter()) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn sample_moments_match_laplace() {
        let lambda = 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(777);
        let n = 1_000_000usize;
        let mut draws: Vec<f64> = (0..n).map(|_| sample_laplace(lambda, &mut rng)).collect();

        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        let expect_var = 2.0 * lambda * lambda;
        assert!(
            (var - expect_var).abs() <= 0.05 * expect_var,
            "variance {var} vs {expect_var}"
        );

        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = draws[n / 2];
        assert!(median.abs() <= 0.05 * lambda, "median {median}");
    }

    #[test]
    fn consecutive_samples_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let n = 100_000usize;
        let draws: Vec<f64> = (0..n).map(|_| sample_laplace(1.0, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        let lag1: f64 = draws
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>()
            / ((n - 1) as f64 * var);
        assert!(lag1.abs() <= 0.01, "lag-1 autocorrelation {lag1}");
    }

    #[test]
    fn mean_noise_over_a_stream_is_small() {
        // 1500 cells at lambda = 1: the mean of the injected noise is
        // within +-0.2 except with probability well under 1e-6 per seed.
        let values = vec![vec![10.0, 20.0, 30.0]; 500];
        let truth = CountStream::new_true(values).unwrap();
        let p = PrivacyParams::plain(1.0, 1.0).unwrap();
        for seed in 0..10 {
            let noisy = release_stream(&truth, &p, RandomSeed(seed)).unwrap();
            let mut total = 0.0;
            for (nr, tr) in noisy.values().iter().zip(truth.values()) {
                for (a, b) in nr.iter().zip(tr.iter()) {
                    total += a - b;
                }
            }
            let mean = total / 1500.0;
            assert!(mean.abs() <= 0.2, "seed {seed}: mean noise {mean}");
        }
    }
}
