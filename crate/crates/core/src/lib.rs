//! Differentially private release of correlated location-count streams.
//!
//! A population of `n` users moves between `m` locations according to a
//! publicly known Markov transition matrix. At every timestep the count of
//! users per location is released under the Laplace mechanism. Because the
//! movement model is public, the noisy stream can be post-processed: a
//! maximum a posteriori estimate combines the released values with a
//! multinomial prior derived from the transition model, and recovers much
//! of the accuracy lost to noise while leaving the privacy guarantee
//! untouched (post-processing invariance).
//!
//! Modules follow the data path:
//!
//! * [`model`]: core types (transition matrices, count streams, privacy parameters)
//! * [`correlation`]: prior construction and Markov propagation
//! * [`mechanism`]: Laplace noise calibration and stream release
//! * [`posterior`]: the per-timestep MAP objective and its subgradient
//! * [`solver`]: projected subgradient descent on the count simplex
//! * [`synth`]: synthetic trajectory generation and count queries
//! * [`metrics`]: error and plausibility measurements
//! * [`pipeline`]: noisy stream in, estimate stream out
//! * [`harness`]: config-driven multi-run experiment sweeps
//!
//! The `parallel` feature (on by default) runs independent work through
//! rayon; without it everything runs sequentially with identical results.

pub mod correlation;
pub mod error;
pub mod exec;
pub mod harness;
pub mod mechanism;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod posterior;
pub mod seed;
pub mod solver;
pub mod special;
pub mod synth;

pub use error::{Error, Result};
