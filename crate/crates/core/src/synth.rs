//! Synthetic population trajectories under the public movement model.
//!
//! Each user walks the location chain independently: the first location is
//! drawn from the initial distribution, every later one from the
//! transition row of the previous location. Users get their own seeded
//! generator derived from the base seed and the user index, so streams are
//! reproducible and insensitive to generation order.

use crate::error::{Error, Result};
use crate::exec;
use crate::mechanism::RandomSeed;
use crate::model::{CountStream, LocationDistribution, TransitionMatrix};
use crate::seed::fnv1a64_words;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let draw = rng.gen::<f64>();
    let mut cum = 0.0;
    for (idx, &p) in probs.iter().enumerate() {
        cum += p;
        if draw < cum {
            return idx;
        }
    }
    // Rounding can leave the cumulative sum a hair under 1.
    probs.len() - 1
}

/// Simulates `n_users` independent walks of length `t_len`. The result is
/// user-major: `out[u][t]` is the location of user `u` at timestep `t`.
pub fn generate_trajectories(
    initial: &LocationDistribution,
    tm: &TransitionMatrix,
    n_users: u64,
    t_len: usize,
    seed: RandomSeed,
) -> Result<Vec<Vec<usize>>> {
    if initial.m() != tm.m() {
        return Err(Error::DimensionMismatch(format!(
            "initial distribution has {} entries but the chain has {} locations",
            initial.m(),
            tm.m()
        )));
    }
    if n_users == 0 {
        return Err(Error::InvalidValue("need at least one user".into()));
    }
    if t_len == 0 {
        return Err(Error::InvalidValue("need at least one timestep".into()));
    }
    // Users are independent, so they fan out through the executor; the
    // per-user seed keeps the output identical either way.
    let out = exec::map_indexed(n_users as usize, |u| {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64_words(&[seed.0, u as u64]));
        let mut path = Vec::with_capacity(t_len);
        let mut loc = sample_index(initial.probs(), &mut rng);
        path.push(loc);
        for _ in 1..t_len {
            loc = sample_index(tm.row(loc), &mut rng);
            path.push(loc);
        }
        path
    });
    Ok(out)
}

/// Histogram query over trajectories: `counts[t][l]` is the number of
/// users at location `l` at timestep `t`.
pub fn count_query(trajectories: &[Vec<usize>], m: usize) -> Result<CountStream> {
    if trajectories.is_empty() {
        return Err(Error::InvalidValue("no trajectories to count".into()));
    }
    let t_len = trajectories[0].len();
    if let Some(bad) = trajectories.iter().position(|tr| tr.len() != t_len) {
        return Err(Error::ShapeMismatch(format!(
            "trajectory {bad} has length {} but the first has {t_len}",
            trajectories[bad].len()
        )));
    }
    let mut counts = vec![vec![0.0; m]; t_len];
    for path in trajectories {
        for (t, &loc) in path.iter().enumerate() {
            if loc >= m {
                return Err(Error::IndexOutOfRange { index: loc, m });
            }
            counts[t][loc] += 1.0;
        }
    }
    CountStream::new_true(counts)
}

/// Generates trajectories and counts them in one step.
pub fn generate_counts(
    initial: &LocationDistribution,
    tm: &TransitionMatrix,
    n_users: u64,
    t_len: usize,
    seed: RandomSeed,
) -> Result<CountStream> {
    let trajectories = generate_trajectories(initial, tm, n_users, t_len, seed)?;
    count_query(&trajectories, tm.m())
}
