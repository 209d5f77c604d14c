//! Prior construction and Markov propagation of location distributions.
//!
//! The population's location distribution at one timestep, multiplied on
//! the right by the row-stochastic transition matrix, gives the
//! distribution one step later:
//!
//! ```text
//! P[t] = P[t-1] * M        (row vector times matrix)
//! ```
//!
//! Smoothing interpolates a transition matrix toward uniform rows and is
//! how different strengths of temporal correlation are produced from one
//! base matrix: entry (i, j) becomes (m_ij + s) / (row_sum + m * s), so
//! s = 0 leaves the matrix unchanged and s -> infinity flattens every row.

use crate::error::{Error, Result};
use crate::model::{LocationDistribution, PriorPolicy, TransitionMatrix};

/// One step of propagation: `prev * tm`.
pub fn propagate(prev: &LocationDistribution, tm: &TransitionMatrix) -> Result<LocationDistribution> {
    let m = tm.m();
    if prev.m() != m {
        return Err(Error::DimensionMismatch(format!(
            "distribution has {} entries but matrix has {} locations",
            prev.m(),
            m
        )));
    }
    let p = prev.probs();
    let mut next = vec![0.0; m];
    for i in 0..m {
        let pi = p[i];
        if pi == 0.0 {
            continue;
        }
        let row = tm.row(i);
        for j in 0..m {
            next[j] += pi * row[j];
        }
    }
    LocationDistribution::new(next)
}

/// First-timestep distribution according to the prior policy.
///
/// `frequency` clamps the first noisy release to nonnegative values and
/// divides by the clamped sum; if everything clamps to zero it falls back
/// to uniform. `uniform` ignores the release entirely.
pub fn prior_distribution(
    policy: PriorPolicy,
    noisy_first: &[f64],
    n: u64,
) -> Result<LocationDistribution> {
    let m = noisy_first.len();
    if m == 0 {
        return Err(Error::DimensionMismatch("first release has no entries".into()));
    }
    if n == 0 {
        return Err(Error::InvalidValue("population must be at least 1".into()));
    }
    match policy {
        PriorPolicy::Uniform => Ok(LocationDistribution::uniform(m)),
        PriorPolicy::Frequency => {
            let clamped: Vec<f64> = noisy_first.iter().map(|&v| v.max(0.0)).collect();
            let sum: f64 = clamped.iter().sum();
            if sum <= 0.0 {
                return Ok(LocationDistribution::uniform(m));
            }
            LocationDistribution::new(clamped.iter().map(|&v| v / sum).collect())
        }
    }
}

/// Distributions for timesteps `1..=t_len`: the prior itself, then
/// `t_len - 1` propagation steps.
pub fn propagate_all(
    prior: &LocationDistribution,
    tm: &TransitionMatrix,
    t_len: usize,
) -> Result<Vec<LocationDistribution>> {
    if t_len == 0 {
        return Err(Error::InvalidValue("propagation needs at least one timestep".into()));
    }
    let mut out = Vec::with_capacity(t_len);
    out.push(prior.clone());
    for _ in 1..t_len {
        let next = propagate(out.last().unwrap(), tm)?;
        out.push(next);
    }
    Ok(out)
}

/// Additive smoothing of every row: `(m_ij + s) / (row_sum + m * s)`.
///
/// `s = 0` returns the matrix unchanged; larger `s` moves rows toward
/// uniform. Panics if `s` is negative or not finite.
pub fn smooth_correlations(base: &TransitionMatrix, s: f64) -> TransitionMatrix {
    assert!(s.is_finite() && s >= 0.0, "smoothing strength must be finite and nonnegative, got {s}");
    if s == 0.0 {
        return base.clone();
    }
    let m = base.m();
    let rows = base
        .rows()
        .iter()
        .map(|row| {
            let denom: f64 = row.iter().sum::<f64>() + m as f64 * s;
            row.iter().map(|&v| (v + s) / denom).collect()
        })
        .collect();
    // Row sums are 1 by construction, so validation cannot fail.
    TransitionMatrix::new(rows).expect("smoothed rows are stochastic")
}
