//! Data-parallel execution with a sequential fallback.
//!
//! `map_indexed` is the single fan-out point for independent jobs
//! (timestep solves, user trajectories, sweep cells). With the `parallel`
//! feature it runs on rayon; without it, it is a plain loop. Results are
//! returned in index order either way, and jobs derive their own seeds, so
//! both paths produce identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to `0..len`, preserving index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..len).into_par_iter().map(f).collect()
}

/// Applies `f` to `0..len`, preserving index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_seq(len, f)
}

/// Always-sequential variant, kept callable for benchmarks and
/// scheduling-invariance checks.
pub fn map_indexed_seq<T, F>(len: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..len).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |i: usize| (i * i) as u64 ^ 0x9e37;
        assert_eq!(map_indexed(100, f), map_indexed_seq(100, f));
    }

    #[test]
    fn order_is_preserved() {
        let out = map_indexed(1000, |i| i);
        assert!(out.iter().enumerate().all(|(i, &v)| i == v));
    }
}
