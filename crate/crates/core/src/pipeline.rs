//! End-to-end post-processing of a noisy stream.
//!
//! This module wires the prior policies, the chain propagation and the
//! per-timestep solver into the two estimation pipelines:
//!
//! * `marginal` conditioning propagates the first-step prior through the
//!   chain once and solves all timesteps against those marginals. The
//!   timesteps decouple completely and solve in parallel.
//! * `filtering` conditioning re-derives each step's prior from the
//!   previous *released* estimate, normalized and pushed through the
//!   chain. Estimates then track the data instead of drifting with the
//!   open-loop marginals; the steps solve sequentially.
//!
//! With `integer_release` the row released at each step is rounded to
//! integers (sum preserved) before anything is conditioned on it, which is
//! the right semantics when the published stream must consist of counts.

use serde::{Deserialize, Serialize};

use crate::correlation::{prior_distribution, propagate, propagate_all};
use crate::error::{Error, Result};
use crate::model::{CountStream, LocationDistribution, PriorPolicy, StreamKind, TransitionMatrix};
use crate::posterior::{fidelity_term, objective_step, ObjectiveSpec, StirlingMode, DEFAULT_FLOOR};
use crate::seed::fnv1a64_words;
use crate::solver::{
    largest_remainder_round, solve_baseline_mle, solve_map, solve_timestep, SolveReport,
    SolverConfig,
};

/// How the per-timestep priors are conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Open loop: priors are the chain marginals of the first-step prior.
    Marginal,
    /// Closed loop: each prior comes from the previously released row.
    Filtering,
}

/// Options for the model-based pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessOptions {
    pub policy: PriorPolicy,
    pub conditioning: Conditioning,
    pub stirling_mode: StirlingMode,
    pub floor: f64,
    pub hard_pin: bool,
    pub integer_release: bool,
}

impl Default for PostprocessOptions {
    fn default() -> Self {
        PostprocessOptions {
            policy: PriorPolicy::Frequency,
            conditioning: Conditioning::Filtering,
            stirling_mode: StirlingMode::ExactLogGamma,
            floor: DEFAULT_FLOOR,
            hard_pin: true,
            integer_release: false,
        }
    }
}

fn check_inputs(noisy: &CountStream, tm: &TransitionMatrix) -> Result<()> {
    if noisy.kind() != StreamKind::Noisy {
        return Err(Error::InvalidValue(format!(
            "post-processing expects a noisy stream, got kind {:?}",
            noisy.kind()
        )));
    }
    if noisy.m() != tm.m() {
        return Err(Error::DimensionMismatch(format!(
            "stream has {} locations but the chain has {}",
            noisy.m(),
            tm.m()
        )));
    }
    Ok(())
}

fn spec_for(
    lambda: f64,
    probs: Vec<LocationDistribution>,
    noisy: CountStream,
    n: u64,
    options: &PostprocessOptions,
) -> Result<ObjectiveSpec> {
    let mut spec = ObjectiveSpec::new(lambda, probs, noisy, n)?;
    spec.stirling_mode = options.stirling_mode;
    spec.floor = options.floor;
    spec.hard_pin = options.hard_pin;
    Ok(spec)
}

fn round_released(row: &mut Vec<f64>, n: u64, spec: &ObjectiveSpec, report_obj: &mut f64) -> Result<()> {
    let rounded = largest_remainder_round(row, n)?;
    *row = rounded.into_iter().map(|v| v as f64).collect();
    *report_obj = objective_step(row, spec, 0);
    Ok(())
}

/// Model-based MAP estimation of the whole stream.
pub fn postprocess_map(
    noisy: &CountStream,
    tm: &TransitionMatrix,
    n: u64,
    lambda: f64,
    options: &PostprocessOptions,
    solver: &SolverConfig,
) -> Result<(CountStream, SolveReport)> {
    check_inputs(noisy, tm)?;
    match options.conditioning {
        Conditioning::Marginal => marginal_pipeline(noisy, tm, n, lambda, options, solver),
        Conditioning::Filtering => filtering_pipeline(noisy, tm, n, lambda, options, solver),
    }
}

fn marginal_pipeline(
    noisy: &CountStream,
    tm: &TransitionMatrix,
    n: u64,
    lambda: f64,
    options: &PostprocessOptions,
    solver: &SolverConfig,
) -> Result<(CountStream, SolveReport)> {
    let prior = prior_distribution(options.policy, noisy.row(0), n)?;
    let probs = propagate_all(&prior, tm, noisy.t_len())?;
    let spec = spec_for(lambda, probs, noisy.clone(), n, options)?;
    let (estimate, mut report) = solve_map(&spec, solver)?;
    if !options.integer_release {
        return Ok((estimate, report));
    }
    let mut rows: Vec<Vec<f64>> = (0..estimate.t_len()).map(|t| estimate.row(t).to_vec()).collect();
    for (t, row) in rows.iter_mut().enumerate() {
        let rounded = largest_remainder_round(row, n)?;
        *row = rounded.into_iter().map(|v| v as f64).collect();
        report.steps[t].objective = objective_step(row, &spec, t);
        report.steps[t].min_entry = row.iter().cloned().fold(f64::INFINITY, f64::min);
        report.steps[t].residual = (row.iter().sum::<f64>() - n as f64).abs();
    }
    Ok((CountStream::new_estimate(rows)?, report))
}

fn filtering_pipeline(
    noisy: &CountStream,
    tm: &TransitionMatrix,
    n: u64,
    lambda: f64,
    options: &PostprocessOptions,
    solver: &SolverConfig,
) -> Result<(CountStream, SolveReport)> {
    let started = std::time::Instant::now();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(noisy.t_len());
    let mut steps = Vec::with_capacity(noisy.t_len());
    let mut prior = prior_distribution(options.policy, noisy.row(0), n)?;
    for t in 0..noisy.t_len() {
        if t > 0 {
            let prev = &rows[t - 1];
            let sum: f64 = prev.iter().sum();
            let normalized =
                LocationDistribution::new(prev.iter().map(|&v| v / sum).collect())?;
            prior = propagate(&normalized, tm)?;
        }
        let step_noisy = CountStream::new_noisy(vec![noisy.row(t).to_vec()])?;
        let spec = spec_for(lambda, vec![prior.clone()], step_noisy, n, options)?;
        // Each step gets its own restart stream, as in the parallel solve.
        let step_solver = SolverConfig {
            restart_seed: fnv1a64_words(&[solver.restart_seed, t as u64]),
            ..solver.clone()
        };
        let (mut row, mut step) = solve_timestep(&spec, 0, &step_solver)?;
        if options.integer_release {
            round_released(&mut row, n, &spec, &mut step.objective)?;
            step.min_entry = row.iter().cloned().fold(f64::INFINITY, f64::min);
            step.residual = (row.iter().sum::<f64>() - n as f64).abs();
        }
        step.t = t;
        rows.push(row);
        steps.push(step);
    }
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok((CountStream::new_estimate(rows)?, SolveReport { steps, wall_ms }))
}

/// Correlation-agnostic reference pipeline. Returns the estimate and its
/// scaled L1 objective against the noisy stream.
pub fn postprocess_baseline(noisy: &CountStream, lambda: f64, n: u64) -> Result<(CountStream, f64)> {
    if noisy.kind() != StreamKind::Noisy {
        return Err(Error::InvalidValue(format!(
            "post-processing expects a noisy stream, got kind {:?}",
            noisy.kind()
        )));
    }
    let estimate = solve_baseline_mle(noisy, lambda, n)?;
    let objective = (0..noisy.t_len())
        .map(|t| fidelity_term(estimate.row(t), noisy.row(t), lambda))
        .sum();
    Ok((estimate, objective))
}
