//! Sweep harness: runs methods over a parameter grid and reports MSE.
//!
//! A sweep is a grid of `(T, budget, smoothing)` points crossed with a
//! number of repeated runs. Every `(point, run)` cell generates one
//! synthetic population from the smoothed chain, releases it once with
//! Laplace noise, and hands the same noisy stream to every method, so
//! methods are compared on identical data. Randomness is derived from the
//! canonical text `"{seed_base}|..|.."` hashed with FNV-1a, which makes
//! every cell reproducible in isolation and the whole sweep independent of
//! scheduling.
//!
//! The budget of a point is by default interpreted as the total for the
//! whole stream and split evenly across its `T` releases; `per_release`
//! applies it to each release unchanged.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

use crate::correlation::smooth_correlations;
use crate::error::{Error, Result};
use crate::exec;
use crate::mechanism::{laplace_scale, release_stream, RandomSeed};
use crate::metrics::{mse, plausibility_violations};
use crate::model::{
    BudgetMode, CountStream, LocationDistribution, PriorPolicy, PrivacyParams, TransitionMatrix,
};
use crate::pipeline::{postprocess_baseline, postprocess_map, Conditioning, PostprocessOptions};
use crate::posterior::StirlingMode;
use crate::seed::fnv1a64;
use crate::solver::{largest_remainder_round, SolverConfig};
use crate::synth::generate_counts;

/// Largest population for which plausibility is evaluated per run.
pub const PLAUSIBILITY_MAX_USERS: u64 = 5;

/// An estimation method the harness can score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BaselineMle,
    MapFrequency,
    MapUniform,
    RawNoisy,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::BaselineMle => "baseline_mle",
            Method::MapFrequency => "map_frequency",
            Method::MapUniform => "map_uniform",
            Method::RawNoisy => "raw_noisy",
        }
    }

    /// Prior policy for the model-based methods, `None` otherwise.
    pub fn policy(self) -> Option<PriorPolicy> {
        match self {
            Method::MapFrequency => Some(PriorPolicy::Frequency),
            Method::MapUniform => Some(PriorPolicy::Uniform),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether a point's budget covers the whole stream or each release.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetAllocation {
    SplitAcrossTime,
    PerRelease,
}

/// Budget actually spent on one release at this grid point.
pub fn effective_budget(budget: f64, t_len: usize, allocation: BudgetAllocation) -> f64 {
    match allocation {
        BudgetAllocation::SplitAcrossTime => budget / t_len as f64,
        BudgetAllocation::PerRelease => budget,
    }
}

fn scalar_or_list<'de, D>(deserializer: D) -> std::result::Result<Vec<usize>, D::Error>
where
    D: Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(usize),
        Many(Vec<usize>),
    }
    Ok(match OneOrMany::deserialize(deserializer)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

/// Full description of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub base_matrix: TransitionMatrix,
    /// Ground-truth distribution at the first timestep; uniform if absent.
    #[serde(default)]
    pub initial: Option<LocationDistribution>,
    #[serde(default = "default_smoothing")]
    pub smoothing_s: Vec<f64>,
    pub budgets: Vec<f64>,
    #[serde(default = "default_budget_mode")]
    pub budget_mode: BudgetMode,
    #[serde(default = "default_one")]
    pub scale_multiplier: f64,
    #[serde(default = "default_one")]
    pub sensitivity: f64,
    #[serde(default = "default_allocation")]
    pub budget_allocation: BudgetAllocation,
    #[serde(rename = "T", deserialize_with = "scalar_or_list")]
    pub t_lens: Vec<usize>,
    pub n_users: u64,
    pub methods: Vec<Method>,
    #[serde(default = "default_conditioning")]
    pub conditioning: Conditioning,
    #[serde(default)]
    pub integer_release: bool,
    #[serde(default = "default_stirling")]
    pub stirling_mode: StirlingMode,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    /// With timing off, wall_ms is reported as exactly 0 and repeated
    /// sweeps produce byte-identical output.
    #[serde(default = "default_true")]
    pub record_timing: bool,
    #[serde(default = "default_cutoff")]
    pub plausibility_cutoff: f64,
}

fn default_smoothing() -> Vec<f64> {
    vec![0.0]
}

fn default_budget_mode() -> BudgetMode {
    BudgetMode::PlainDp
}

fn default_one() -> f64 {
    1.0
}

fn default_allocation() -> BudgetAllocation {
    BudgetAllocation::SplitAcrossTime
}

fn default_conditioning() -> Conditioning {
    Conditioning::Filtering
}

fn default_stirling() -> StirlingMode {
    StirlingMode::ExactLogGamma
}

fn default_runs() -> usize {
    50
}

fn default_true() -> bool {
    true
}

fn default_cutoff() -> f64 {
    1e-10
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidValue("runs must be at least 1".into()));
        }
        if self.n_users == 0 {
            return Err(Error::InvalidValue("n_users must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidValue("methods must not be empty".into()));
        }
        if self.budgets.is_empty() {
            return Err(Error::InvalidValue("budgets must not be empty".into()));
        }
        for &b in &self.budgets {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::InvalidValue(format!("budgets must be positive, got {b}")));
            }
        }
        if self.t_lens.is_empty() {
            return Err(Error::InvalidValue("T must not be empty".into()));
        }
        if self.t_lens.iter().any(|&t| t == 0) {
            return Err(Error::InvalidValue("T must be at least 1".into()));
        }
        if self.smoothing_s.is_empty() {
            return Err(Error::InvalidValue("smoothing_s must not be empty".into()));
        }
        for &s in &self.smoothing_s {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidValue(format!(
                    "smoothing_s must be finite and nonnegative, got {s}"
                )));
            }
        }
        if let Some(initial) = &self.initial {
            if initial.m() != self.base_matrix.m() {
                return Err(Error::DimensionMismatch(format!(
                    "initial distribution has {} entries but base_matrix has {} locations",
                    initial.m(),
                    self.base_matrix.m()
                )));
            }
        }
        if !(self.plausibility_cutoff.is_finite() && self.plausibility_cutoff >= 0.0) {
            return Err(Error::InvalidValue(format!(
                "plausibility_cutoff must be finite and nonnegative, got {}",
                self.plausibility_cutoff
            )));
        }
        // Per-release parameter validity for every grid point.
        for &t_len in &self.t_lens {
            for &budget in &self.budgets {
                let eff = effective_budget(budget, t_len, self.budget_allocation);
                PrivacyParams::new(self.sensitivity, eff, self.budget_mode, self.scale_multiplier)?;
            }
        }
        Ok(())
    }
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub point_index: usize,
    pub t_len: usize,
    pub budget: f64,
    pub s: f64,
}

/// Grid points in canonical order: `T` outermost, then budget, then
/// smoothing.
pub fn grid_points(config: &ExperimentConfig) -> Vec<SweepPoint> {
    let mut points = Vec::new();
    for &t_len in &config.t_lens {
        for &budget in &config.budgets {
            for &s in &config.smoothing_s {
                points.push(SweepPoint { point_index: points.len(), t_len, budget, s });
            }
        }
    }
    points
}

/// Seed for one `(method, point, run)` cell; recorded in the output and
/// used for the method's own randomness (solver restarts).
pub fn cell_seed(seed_base: u64, method: Method, point_index: usize, run: usize) -> u64 {
    fnv1a64(format!("{seed_base}|{method}|{point_index}|{run}").as_bytes())
}

/// Seed for the synthetic population of a `(point, run)` cell. Shared by
/// all methods so they see the same data.
pub fn generation_seed(seed_base: u64, point_index: usize, run: usize) -> u64 {
    fnv1a64(format!("{seed_base}|{point_index}|{run}|generate").as_bytes())
}

/// Seed for the Laplace noise of a `(point, run)` cell.
pub fn noise_seed(seed_base: u64, point_index: usize, run: usize) -> u64 {
    fnv1a64(format!("{seed_base}|{point_index}|{run}|release").as_bytes())
}

/// One scored `(method, point, run)` cell.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub method: Method,
    pub point_index: usize,
    pub budget: f64,
    pub t_len: usize,
    pub s: f64,
    pub run: usize,
    pub seed: u64,
    pub mse: f64,
    /// Sub-threshold transitions of the rounded estimate; only evaluated
    /// for post-processing methods on populations of at most
    /// [`PLAUSIBILITY_MAX_USERS`].
    pub plausibility_violations: Option<u64>,
    /// Final objective value; absent for the raw release.
    pub objective: Option<f64>,
    pub wall_ms: f64,
}

/// Per-`(method, point)` means over runs.
#[derive(Debug, Clone, Serialize)]
pub struct SweepMeans {
    pub method: Method,
    pub point_index: usize,
    pub budget: f64,
    pub t_len: usize,
    pub s: f64,
    pub runs: usize,
    pub mse: f64,
    pub plausibility_violations: Option<f64>,
    pub objective: Option<f64>,
    pub wall_ms: f64,
}

/// All rows and their per-cell means.
#[derive(Debug, Clone, Serialize)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub means: Vec<SweepMeans>,
}

struct CellData {
    tm: TransitionMatrix,
    truth: CountStream,
    noisy: CountStream,
    lambda: f64,
}

fn prepare_cell(config: &ExperimentConfig, point: &SweepPoint, run: usize) -> Result<CellData> {
    let tm = smooth_correlations(&config.base_matrix, point.s);
    let initial = match &config.initial {
        Some(d) => d.clone(),
        None => LocationDistribution::uniform(tm.m()),
    };
    let gen_seed = generation_seed(config.seed_base, point.point_index, run);
    let truth =
        generate_counts(&initial, &tm, config.n_users, point.t_len, RandomSeed(gen_seed))?;
    let eff = effective_budget(point.budget, point.t_len, config.budget_allocation);
    let params =
        PrivacyParams::new(config.sensitivity, eff, config.budget_mode, config.scale_multiplier)?;
    let lambda = laplace_scale(&params);
    let noise = noise_seed(config.seed_base, point.point_index, run);
    let noisy = release_stream(&truth, &params, RandomSeed(noise))?;
    Ok(CellData { tm, truth, noisy, lambda })
}

fn violations_of(
    estimate: &CountStream,
    data: &CellData,
    config: &ExperimentConfig,
) -> Result<u64> {
    let n = config.n_users;
    let rows: Result<Vec<Vec<f64>>> = (0..estimate.t_len())
        .map(|t| {
            let rounded = largest_remainder_round(estimate.row(t), n)?;
            Ok(rounded.into_iter().map(|v| v as f64).collect())
        })
        .collect();
    let rounded = CountStream::new_estimate(rows?)?;
    Ok(plausibility_violations(&rounded, &data.tm, config.plausibility_cutoff)? as u64)
}

fn score_method(
    config: &ExperimentConfig,
    point: &SweepPoint,
    run: usize,
    data: &CellData,
    method: Method,
) -> Result<SweepRow> {
    let seed = cell_seed(config.seed_base, method, point.point_index, run);
    let started = std::time::Instant::now();
    let (estimate, objective) = match method {
        Method::RawNoisy => (None, None),
        Method::BaselineMle => {
            let (est, obj) = postprocess_baseline(&data.noisy, data.lambda, config.n_users)?;
            (Some(est), Some(obj))
        }
        Method::MapFrequency | Method::MapUniform => {
            let options = PostprocessOptions {
                policy: method.policy().expect("model-based method has a policy"),
                conditioning: config.conditioning,
                stirling_mode: config.stirling_mode,
                integer_release: config.integer_release,
                ..PostprocessOptions::default()
            };
            let solver = SolverConfig { restart_seed: seed, ..config.solver.clone() };
            let (est, report) =
                postprocess_map(&data.noisy, &data.tm, config.n_users, data.lambda, &options, &solver)?;
            (Some(est), Some(report.total_objective()))
        }
    };
    let mse_value = match &estimate {
        Some(est) => mse(est, &data.truth)?,
        None => mse(&data.noisy, &data.truth)?,
    };
    let plausibility = match &estimate {
        Some(est) if config.n_users <= PLAUSIBILITY_MAX_USERS => {
            Some(violations_of(est, data, config)?)
        }
        _ => None,
    };
    let wall_ms = if config.record_timing { started.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
    Ok(SweepRow {
        method,
        point_index: point.point_index,
        budget: point.budget,
        t_len: point.t_len,
        s: point.s,
        run,
        seed,
        mse: mse_value,
        plausibility_violations: plausibility,
        objective,
        wall_ms,
    })
}

/// Runs the whole sweep. Cells are independent and run through the
/// data-parallel executor; output order is deterministic regardless.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutput> {
    config.validate()?;
    let points = grid_points(config);
    let jobs = points.len() * config.runs;
    let results = exec::map_indexed(jobs, |job| -> Result<Vec<SweepRow>> {
        let point = &points[job / config.runs];
        let run = job % config.runs;
        let data = prepare_cell(config, point, run)?;
        config
            .methods
            .iter()
            .map(|&method| score_method(config, point, run, &data, method))
            .collect()
    });

    let mut rows = Vec::with_capacity(jobs * config.methods.len());
    for result in results {
        rows.extend(result?);
    }
    rows.sort_by(|a, b| {
        a.method
            .name()
            .cmp(b.method.name())
            .then(a.point_index.cmp(&b.point_index))
            .then(a.run.cmp(&b.run))
    });

    let means = compute_means(&rows);
    Ok(SweepOutput { rows, means })
}

fn compute_means(rows: &[SweepRow]) -> Vec<SweepMeans> {
    // Keyed by (method, point); BTreeMap iteration matches the row sort.
    let mut groups: BTreeMap<(Method, usize), Vec<&SweepRow>> = BTreeMap::new();
    for row in rows {
        groups.entry((row.method, row.point_index)).or_default().push(row);
    }
    groups
        .into_iter()
        .map(|((method, point_index), group)| {
            let count = group.len() as f64;
            let first = group[0];
            let mse = group.iter().map(|r| r.mse).sum::<f64>() / count;
            let wall_ms = group.iter().map(|r| r.wall_ms).sum::<f64>() / count;
            let plausibility_violations = group
                .iter()
                .map(|r| r.plausibility_violations)
                .collect::<Option<Vec<u64>>>()
                .map(|v| v.iter().map(|&x| x as f64).sum::<f64>() / count);
            let objective = group
                .iter()
                .map(|r| r.objective)
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / count);
            SweepMeans {
                method,
                point_index,
                budget: first.budget,
                t_len: first.t_len,
                s: first.s,
                runs: group.len(),
                mse,
                plausibility_violations,
                objective,
                wall_ms,
            }
        })
        .collect()
}

fn opt_cell<T: fmt::Display>(value: &Option<T>) -> String {
    match value {
        Some(v) => v.to_string(),
        None => "na".into(),
    }
}

/// Per-run rows as CSV.
pub fn rows_csv(rows: &[SweepRow]) -> String {
    let mut out =
        String::from("method,budget,T,s,run,seed,mse,plausibility_violations,objective,wall_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.budget,
            r.t_len,
            r.s,
            r.run,
            r.seed,
            r.mse,
            opt_cell(&r.plausibility_violations),
            opt_cell(&r.objective),
            r.wall_ms
        ));
    }
    out
}

/// Per-cell means as CSV.
pub fn means_csv(means: &[SweepMeans]) -> String {
    let mut out =
        String::from("method,budget,T,s,runs,mse,plausibility_violations,objective,wall_ms\n");
    for r in means {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.budget,
            r.t_len,
            r.s,
            r.runs,
            r.mse,
            opt_cell(&r.plausibility_violations),
            opt_cell(&r.objective),
            r.wall_ms
        ));
    }
    out
}
