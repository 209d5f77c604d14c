//! Per-timestep MAP objective for count estimation.
//!
//! For one timestep with noisy release `noisy`, candidate estimate `r`,
//! propagated location distribution `P` and population `n`, the negative
//! log posterior splits into a fidelity term from the Laplace noise model
//! and a prior term from the multinomial count model:
//!
//! ```text
//! fidelity(r) = (1/lambda) * sum_l |noisy_l - r_l|
//! prior(r)    = -( ln n! + sum_l ( r_l ln P_l - log_factorial(r_l) ) )
//! ```
//!
//! `log_factorial` extends `ln x!` to real `x`. The default mode evaluates
//! it exactly as `ln Gamma(x + 1)`, which is convex and finite on the whole
//! feasible set. The `stirling` mode uses the classical approximation
//! `ln(2 pi x)/2 + x ln(x/e)`; it diverges to minus infinity as `x -> 0`,
//! so its argument is floored. Probabilities inside logarithms are floored
//! the same way, and (optionally) cells whose probability is exactly zero
//! are pinned to a zero estimate by the solver instead of being scored.
//!
//! The full-stream objective is the sum of independent per-timestep terms,
//! including the constant `ln n!` once per timestep so values are
//! comparable across modes and stream lengths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CountStream, LocationDistribution};
use crate::special::{digamma, ln_gamma};

/// Default floor for probabilities inside logarithms and for the Stirling
/// argument.
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// How `ln x!` is evaluated inside the prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StirlingMode {
    /// `ln(2 pi x)/2 + x ln(x/e)` with the argument floored.
    Stirling,
    /// Exact `ln Gamma(x + 1)`.
    ExactLogGamma,
}

/// Everything that defines the estimation program for one noisy stream.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    pub lambda: f64,
    pub probs: Vec<LocationDistribution>,
    pub noisy: CountStream,
    pub n: u64,
    pub stirling_mode: StirlingMode,
    pub floor: f64,
    pub hard_pin: bool,
}

impl ObjectiveSpec {
    /// Builds a spec with the default mode (exact), floor and pinning.
    pub fn new(
        lambda: f64,
        probs: Vec<LocationDistribution>,
        noisy: CountStream,
        n: u64,
    ) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidValue(format!("lambda must be positive, got {lambda}")));
        }
        if n == 0 {
            return Err(Error::InvalidValue("population must be at least 1".into()));
        }
        if probs.len() != noisy.t_len() {
            return Err(Error::DimensionMismatch(format!(
                "{} distributions for {} timesteps",
                probs.len(),
                noisy.t_len()
            )));
        }
        if let Some(bad) = probs.iter().position(|p| p.m() != noisy.m()) {
            return Err(Error::DimensionMismatch(format!(
                "distribution at t={} has {} entries but the stream has {} locations",
                bad,
                probs[bad].m(),
                noisy.m()
            )));
        }
        Ok(ObjectiveSpec {
            lambda,
            probs,
            noisy,
            n,
            stirling_mode: StirlingMode::ExactLogGamma,
            floor: DEFAULT_FLOOR,
            hard_pin: true,
        })
    }

    pub fn t_len(&self) -> usize {
        self.noisy.t_len()
    }

    pub fn m(&self) -> usize {
        self.noisy.m()
    }

    /// Cells forced to zero at timestep `t`: probability exactly zero while
    /// pinning is on.
    pub fn pinned(&self, t: usize) -> Vec<bool> {
        self.probs[t]
            .probs()
            .iter()
            .map(|&p| self.hard_pin && p == 0.0)
            .collect()
    }
}

/// `(1/lambda) * sum_l |noisy_l - estimate_l|`.
pub fn fidelity_term(estimate_t: &[f64], noisy_t: &[f64], lambda: f64) -> f64 {
    debug_assert_eq!(estimate_t.len(), noisy_t.len());
    let l1: f64 = estimate_t
        .iter()
        .zip(noisy_t.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    l1 / lambda
}

/// `ln x!` extended to real `x >= 0` in the chosen mode.
pub fn log_factorial(x: f64, mode: StirlingMode, floor: f64) -> f64 {
    debug_assert!(x >= 0.0, "log_factorial needs x >= 0, got {x}");
    match mode {
        StirlingMode::ExactLogGamma => ln_gamma(x + 1.0),
        StirlingMode::Stirling => {
            let x = x.max(floor);
            0.5 * (2.0 * std::f64::consts::PI * x).ln() + x * (x.ln() - 1.0)
        }
    }
}

/// Negative multinomial log likelihood of the counts `estimate_t` under
/// cell probabilities `probs_t`.
pub fn prior_term(
    estimate_t: &[f64],
    probs_t: &LocationDistribution,
    n: u64,
    mode: StirlingMode,
    floor: f64,
) -> f64 {
    debug_assert_eq!(estimate_t.len(), probs_t.m());
    // ln n! stays exact in both modes so values are comparable.
    let mut acc = ln_gamma(n as f64 + 1.0);
    for (&r, &p) in estimate_t.iter().zip(probs_t.probs()) {
        acc += r * p.max(floor).ln() - log_factorial(r, mode, floor);
    }
    -acc
}

/// Objective restricted to one timestep of the spec.
pub fn objective_step(estimate_t: &[f64], spec: &ObjectiveSpec, t: usize) -> f64 {
    fidelity_term(estimate_t, spec.noisy.row(t), spec.lambda)
        + prior_term(estimate_t, &spec.probs[t], spec.n, spec.stirling_mode, spec.floor)
}

/// Full-stream objective: the sum of the per-timestep objectives.
pub fn objective(estimate: &CountStream, spec: &ObjectiveSpec) -> Result<f64> {
    if estimate.t_len() != spec.t_len() || estimate.m() != spec.m() {
        return Err(Error::ShapeMismatch(format!(
            "estimate is {}x{} but the spec is {}x{}",
            estimate.t_len(),
            estimate.m(),
            spec.t_len(),
            spec.m()
        )));
    }
    Ok((0..spec.t_len())
        .map(|t| objective_step(estimate.row(t), spec, t))
        .sum())
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn d_log_factorial(r: f64, mode: StirlingMode) -> f64 {
    match mode {
        StirlingMode::ExactLogGamma => digamma(r + 1.0),
        StirlingMode::Stirling => 0.5 / r + r.ln(),
    }
}

/// Subgradient of the timestep objective at an interior point.
///
/// Component `l` is
/// `-(1/lambda) sign(noisy_l - r_l) - ln max(P_l, floor) + d/dr ln r_l!`,
/// where the derivative of `ln r!` is `digamma(r + 1)` in exact mode and
/// `1/(2r) + ln r` in Stirling mode. At a fidelity kink (`r_l = noisy_l`)
/// the zero subgradient element is chosen.
pub fn subgradient(estimate_t: &[f64], spec: &ObjectiveSpec, t: usize) -> Result<Vec<f64>> {
    if estimate_t.len() != spec.m() {
        return Err(Error::ShapeMismatch(format!(
            "estimate row has {} entries, expected {}",
            estimate_t.len(),
            spec.m()
        )));
    }
    if let Some(bad) = estimate_t.iter().position(|&r| r <= spec.floor) {
        return Err(Error::NonInteriorPoint { index: bad, value: estimate_t[bad] });
    }
    let mut out = vec![0.0; spec.m()];
    subgradient_into(estimate_t, spec, t, &mut out);
    Ok(out)
}

/// Subgradient with special-function arguments clamped to the floor, so it
/// is defined on the boundary as well. The solver iterates through
/// boundary points and needs this everywhere.
pub(crate) fn subgradient_into(estimate_t: &[f64], spec: &ObjectiveSpec, t: usize, out: &mut [f64]) {
    let noisy_t = spec.noisy.row(t);
    let probs_t = spec.probs[t].probs();
    let inv_lambda = 1.0 / spec.lambda;
    for l in 0..spec.m() {
        let r = estimate_t[l].max(spec.floor);
        out[l] = -inv_lambda * sign0(noisy_t[l] - estimate_t[l]) - probs_t[l].max(spec.floor).ln()
            + d_log_factorial(r, spec.stirling_mode);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StreamKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dist(p: Vec<f64>) -> LocationDistribution {
        LocationDistribution::new(p).unwrap()
    }

    #[test]
    fn fidelity_matches_hand_values() {
        assert_eq!(fidelity_term(&[3.0, 2.0], &[3.0, 2.0], 1.0), 0.0);
        assert!((fidelity_term(&[3.0, 2.0], &[3.7, 1.3], 1.0) - 1.4).abs() < 1e-12);
        assert!((fidelity_term(&[3.0, 2.0], &[3.7, 1.3], 2.0) - 0.7).abs() < 1e-12);
        assert!((fidelity_term(&[1.0, 1.0], &[1.4, 0.6], 1.0) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn log_factorial_exact_values() {
        assert!(log_factorial(0.0, StirlingMode::ExactLogGamma, DEFAULT_FLOOR).abs() < 1e-12);
        let ln_10_fact = 3_628_800.0f64.ln();
        assert!(
            (log_factorial(10.0, StirlingMode::ExactLogGamma, DEFAULT_FLOOR) - ln_10_fact).abs()
                < 1e-9
        );
    }

    #[test]
    fn log_factorial_stirling_values() {
        let at_one = log_factorial(1.0, StirlingMode::Stirling, DEFAULT_FLOOR);
        assert!((at_one - (-0.081_061_466_795_327_33)).abs() < 1e-12);
        // The approximation error shrinks like 1/(12x).
        let exact = log_factorial(100.0, StirlingMode::ExactLogGamma, DEFAULT_FLOOR);
        let approx = log_factorial(100.0, StirlingMode::Stirling, DEFAULT_FLOOR);
        assert!((exact - approx).abs() < 1e-3);
        // The floor keeps the value finite at zero.
        assert!(log_factorial(0.0, StirlingMode::Stirling, 1e-6).is_finite());
    }

    #[test]
    fn prior_term_matches_hand_values() {
        use std::f64::consts::LN_2;
        let v = prior_term(&[1.0, 0.0], &dist(vec![1.0, 0.0]), 1, StirlingMode::ExactLogGamma, DEFAULT_FLOOR);
        assert!(v.abs() < 1e-12, "{v}");
        let v = prior_term(&[1.0, 1.0], &dist(vec![0.5, 0.5]), 2, StirlingMode::ExactLogGamma, DEFAULT_FLOOR);
        assert!((v - LN_2).abs() < 1e-12, "{v}");
        let v = prior_term(&[2.0, 0.0], &dist(vec![0.5, 0.5]), 2, StirlingMode::ExactLogGamma, DEFAULT_FLOOR);
        assert!((v - 2.0 * LN_2).abs() < 1e-12, "{v}");
    }

    fn spec_from(
        lambda: f64,
        probs: Vec<Vec<f64>>,
        noisy: Vec<Vec<f64>>,
        n: u64,
    ) -> ObjectiveSpec {
        ObjectiveSpec::new(
            lambda,
            probs.into_iter().map(|p| dist(p)).collect(),
            CountStream::new(StreamKind::Noisy, noisy).unwrap(),
            n,
        )
        .unwrap()
    }

    #[test]
    fn feasible_noisy_estimate_scores_prior_only() {
        let spec = spec_from(
            2.0,
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![1.0, 1.0], vec![2.0, 0.0]],
            2,
        );
        let est = CountStream::new_estimate(vec![vec![1.0, 1.0], vec![2.0, 0.0]]).unwrap();
        let total = objective(&est, &spec).unwrap();
        let prior_only: f64 = (0..2)
            .map(|t| prior_term(est.row(t), &spec.probs[t], 2, spec.stirling_mode, spec.floor))
            .sum();
        assert!((total - prior_only).abs() < 1e-12);
    }

    #[test]
    fn objective_rejects_shape_mismatch() {
        let spec = spec_from(1.0, vec![vec![0.5, 0.5]], vec![vec![1.0, 1.0]], 2);
        let est = CountStream::new_estimate(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(objective(&est, &spec), Err(Error::ShapeMismatch(_))));
    }

    fn random_spec(rng: &mut ChaCha8Rng, t_len: usize, m: usize, n: u64) -> ObjectiveSpec {
        let probs: Vec<Vec<f64>> = (0..t_len)
            .map(|_| {
                let raw: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() + 0.05).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / sum).collect()
            })
            .collect();
        let noisy: Vec<Vec<f64>> = (0..t_len)
            .map(|_| (0..m).map(|_| rng.gen::<f64>() * n as f64 * 1.5 - 2.0).collect())
            .collect();
        spec_from(0.5 + rng.gen::<f64>() * 3.0, probs, noisy, n)
    }

    #[test]
    fn stream_objective_is_separable_across_timesteps() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = random_spec(&mut rng, 7, 3, 6);
        let est_rows: Vec<Vec<f64>> = (0..7)
            .map(|_| {
                let raw: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() + 0.01).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|v| 6.0 * v / sum).collect()
            })
            .collect();
        let est = CountStream::new_estimate(est_rows.clone()).unwrap();
        let full = objective(&est, &spec).unwrap();

        let mut step_sum = 0.0;
        for t in 0..7 {
            let sub = ObjectiveSpec {
                lambda: spec.lambda,
                probs: vec![spec.probs[t].clone()],
                noisy: CountStream::new_noisy(vec![spec.noisy.row(t).to_vec()]).unwrap(),
                n: spec.n,
                stirling_mode: spec.stirling_mode,
                floor: spec.floor,
                hard_pin: spec.hard_pin,
            };
            let sub_est = CountStream::new_estimate(vec![est_rows[t].clone()]).unwrap();
            step_sum += objective(&sub_est, &sub).unwrap();
        }
        assert!((full - step_sum).abs() < 1e-10, "{full} vs {step_sum}");
    }

    #[test]
    fn subgradient_requires_interior_points() {
        let spec = spec_from(1.0, vec![vec![0.5, 0.5]], vec![vec![1.0, 1.0]], 2);
        let err = subgradient(&[2.0, 0.0], &spec, 0).unwrap_err();
        assert!(matches!(err, Error::NonInteriorPoint { index: 1, .. }));
    }

    #[test]
    fn subgradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let h = 1e-5;
        for mode in [StirlingMode::ExactLogGamma, StirlingMode::Stirling] {
            for _ in 0..50 {
                let m = 2 + (rng.gen::<usize>() % 3);
                let mut spec = random_spec(&mut rng, 1, m, 9);
                spec.stirling_mode = mode;
                // Interior point kept away from the fidelity kinks so the
                // objective is differentiable in an h-neighborhood.
                let point: Vec<f64> = (0..m)
                    .map(|l| {
                        let mut r = 0.5 + rng.gen::<f64>() * 8.0;
                        while (r - spec.noisy.row(0)[l]).abs() < 0.1 {
                            r += 0.17;
                        }
                        r
                    })
                    .collect();
                let grad = subgradient(&point, &spec, 0).unwrap();
                for l in 0..m {
                    let mut hi = point.clone();
                    hi[l] += h;
                    let mut lo = point.clone();
                    lo[l] -= h;
                    let fd =
                        (objective_step(&hi, &spec, 0) - objective_step(&lo, &spec, 0)) / (2.0 * h);
                    let denom = fd.abs().max(1.0);
                    assert!(
                        (grad[l] - fd).abs() / denom <= 1e-4,
                        "mode {mode:?} l={l}: analytic {} vs fd {fd}",
                        grad[l]
                    );
                }
            }
        }
    }

    /// Direct multinomial pmf via integer factorials, no gamma functions.
    fn pmf_direct(r: &[u64], p: &[f64], n: u64) -> f64 {
        let fact = |k: u64| -> f64 { (1..=k).map(|v| v as f64).product() };
        let mut v = fact(n);
        for (&ri, &pi) in r.iter().zip(p.iter()) {
            v = v / fact(ri) * pi.powi(ri as i32);
        }
        v
    }

    #[test]
    fn exact_prior_matches_direct_pmf() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let m = 2 + (rng.gen::<usize>() % 3);
            let n = 1 + (rng.gen::<u64>() % 12);
            let raw: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() + 0.05).collect();
            let sum: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.into_iter().map(|v| v / sum).collect();
            // Random composition of n over m cells.
            let mut r = vec![0u64; m];
            for _ in 0..n {
                r[rng.gen::<usize>() % m] += 1;
            }
            let rf: Vec<f64> = r.iter().map(|&v| v as f64).collect();
            let term = prior_term(&rf, &dist(p.clone()), n, StirlingMode::ExactLogGamma, DEFAULT_FLOOR);
            let expect = -pmf_direct(&r, &p, n).ln();
            assert!((term - expect).abs() <= 1e-9, "n={n} r={r:?}: {term} vs {expect}");
        }
    }

    #[test]
    fn stirling_gap_is_bounded_away_from_zero_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..100 {
            let m = 2 + (rng.gen::<usize>() % 4);
            let n = 40;
            let raw: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() + 0.05).collect();
            let sum: f64 = raw.iter().sum();
            let p = dist(raw.into_iter().map(|v| v / sum).collect());
            // Entries at least 1, real valued.
            let mut r: Vec<f64> = (0..m).map(|_| 1.0 + rng.gen::<f64>() * 10.0).collect();
            let rs: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v *= n as f64 / rs);
            if r.iter().any(|&v| v < 1.0) {
                continue;
            }
            let exact = prior_term(&r, &p, n, StirlingMode::ExactLogGamma, DEFAULT_FLOOR);
            let approx = prior_term(&r, &p, n, StirlingMode::Stirling, DEFAULT_FLOOR);
            assert!(
                (exact - approx).abs() <= m as f64 * 0.09,
                "m={m}: exact {exact} vs stirling {approx}"
            );
        }
    }

    #[test]
    fn lax_budget_makes_the_prior_dominate() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let base = random_spec(&mut rng, 4, 3, 8);
        let est_rows: Vec<Vec<f64>> = (0..4).map(|_| vec![3.0, 3.0, 2.0]).collect();
        let est = CountStream::new_estimate(est_rows).unwrap();
        let mut last_ratio = f64::INFINITY;
        for lambda in [1e3, 1e6, 1e9] {
            let mut spec = base.clone();
            spec.lambda = lambda;
            let total = objective(&est, &spec).unwrap();
            let prior: f64 = (0..4)
                .map(|t| prior_term(est.row(t), &spec.probs[t], 8, spec.stirling_mode, spec.floor))
                .sum();
            let ratio = ((total - prior) / total).abs();
            assert!(ratio < last_ratio);
            last_ratio = ratio;
        }
        assert!(last_ratio < 1e-6, "fidelity share {last_ratio}");
    }

    /// Enumerates integer compositions of n into m parts.
    fn compositions(n: u64, m: usize) -> Vec<Vec<u64>> {
        if m == 1 {
            return vec![vec![n]];
        }
        let mut out = Vec::new();
        for first in 0..=n {
            for mut rest in compositions(n - first, m - 1) {
                let mut v = vec![first];
                v.append(&mut rest);
                out.push(v);
            }
        }
        out
    }

    #[test]
    fn uniform_prior_with_tight_fidelity_reduces_to_l1_fit() {
        // With uniform probabilities and a dominant fidelity weight the
        // grid argmin of the full objective is the grid argmin of the
        // fidelity term alone.
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for m in [2usize, 3] {
            for n in 1..=4u64 {
                for _ in 0..20 {
                    let noisy: Vec<f64> =
                        (0..m).map(|_| rng.gen::<f64>() * (n as f64 + 2.0) - 1.0).collect();
                    let spec = spec_from(
                        1e-4,
                        vec![vec![1.0 / m as f64; m]],
                        vec![noisy.clone()],
                        n,
                    );
                    let grid = compositions(n, m);
                    let as_f64 =
                        |c: &Vec<u64>| c.iter().map(|&v| v as f64).collect::<Vec<f64>>();
                    let best_full = grid
                        .iter()
                        .min_by(|a, b| {
                            objective_step(&as_f64(a), &spec, 0)
                                .partial_cmp(&objective_step(&as_f64(b), &spec, 0))
                                .unwrap()
                        })
                        .unwrap();
                    let mut fids: Vec<(f64, &Vec<u64>)> = grid
                        .iter()
                        .map(|c| (fidelity_term(&as_f64(c), &noisy, 1.0), c))
                        .collect();
                    fids.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                    // The full argmin is always near-optimal in unscaled L1
                    // and exactly the L1 argmin whenever that is clear-cut.
                    let full_fid = fidelity_term(&as_f64(best_full), &noisy, 1.0);
                    assert!(full_fid <= fids[0].0 + 1e-2, "{noisy:?}");
                    if fids.len() > 1 && fids[1].0 > fids[0].0 + 1e-2 {
                        assert_eq!(best_full, fids[0].1, "{noisy:?}");
                    }
                }
            }
        }
    }
}
