//! `corrdp`: generate, release, post-process, evaluate, sweep.
//!
//! Every subcommand reads one JSON config (`--config`), writes its outputs
//! into `--out`, and exits 0 on success, 2 on validation problems, 3 on
//! runtime failures (i/o, oversized instances). Outputs are staged to
//! `.tmp` files and renamed at the end, so a failed invocation leaves no
//! partial files behind. Paths inside a config resolve relative to the
//! config file's directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use corrdp::correlation::smooth_correlations;
use corrdp::harness::{means_csv, rows_csv, run_sweep, ExperimentConfig, Method};
use corrdp::mechanism::{laplace_scale, release_stream, RandomSeed};
use corrdp::model::{
    BudgetMode, CountStream, LocationDistribution, PrivacyParams, StreamKind, TransitionMatrix,
};
use corrdp::pipeline::{postprocess_baseline, postprocess_map, Conditioning, PostprocessOptions};
use corrdp::posterior::{StirlingMode, DEFAULT_FLOOR};
use corrdp::solver::{largest_remainder_round, SolverConfig, StepReport};
use corrdp::synth::{count_query, generate_trajectories};
use corrdp::{Error, Result};

#[derive(Parser)]
#[command(name = "corrdp", version, about = "Private release of correlated count streams")]
struct Cli {
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory the outputs are written into (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides the config's seed (seed_base for sweeps).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate user trajectories and the true count stream.
    Generate,
    /// Add calibrated Laplace noise to a true count stream.
    Release,
    /// Estimate the true stream from a noisy one.
    Postprocess,
    /// Score an estimate against the truth.
    Evaluate,
    /// Run a full multi-method experiment grid.
    Sweep,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Io { .. } | Error::InstanceTooLarge(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidValue(format!("--threads {threads}: {e}")))?;
    }
    let config_path = cli.config.as_deref().ok_or_else(|| {
        Error::InvalidValue("--config <path> is required for every subcommand".into())
    })?;
    let text = fs::read_to_string(config_path).map_err(|e| Error::Io {
        path: config_path.display().to_string(),
        message: e.to_string(),
    })?;
    let base_dir = config_path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let ctx = Context {
        config_path: config_path.display().to_string(),
        base_dir,
        out_dir: cli.out,
        seed: cli.seed,
    };
    match cli.command {
        Command::Generate => cmd_generate(&ctx, &text),
        Command::Release => cmd_release(&ctx, &text),
        Command::Postprocess => cmd_postprocess(&ctx, &text),
        Command::Evaluate => cmd_evaluate(&ctx, &text),
        Command::Sweep => cmd_sweep(&ctx, &text),
    }
}

struct Context {
    config_path: String,
    base_dir: PathBuf,
    out_dir: PathBuf,
    seed: Option<u64>,
}

impl Context {
    fn parse<'a, T: Deserialize<'a>>(&self, text: &'a str) -> Result<T> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidValue(format!("{}: {e}", self.config_path)))
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn read_stream(&self, path: &Path) -> Result<CountStream> {
        let full = self.resolve(path);
        let text = fs::read_to_string(&full).map_err(|e| Error::Io {
            path: full.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidValue(format!("{}: {e}", full.display())))
    }

    /// Stages every file to `<name>.tmp`, then renames. On any failure the
    /// temporaries and already-renamed outputs of this invocation are
    /// removed.
    fn write_outputs(&self, files: &[(&str, String)]) -> Result<()> {
        let io_err = |p: &Path, e: std::io::Error| Error::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        };
        fs::create_dir_all(&self.out_dir).map_err(|e| io_err(&self.out_dir, e))?;
        let mut tmps: Vec<PathBuf> = Vec::new();
        let mut renamed: Vec<PathBuf> = Vec::new();
        let mut stage = || -> Result<()> {
            for (name, content) in files {
                let tmp = self.out_dir.join(format!("{name}.tmp"));
                fs::write(&tmp, content).map_err(|e| io_err(&tmp, e))?;
                tmps.push(tmp);
            }
            for ((name, _), tmp) in files.iter().zip(tmps.clone()) {
                let target = self.out_dir.join(name);
                fs::rename(&tmp, &target).map_err(|e| io_err(&target, e))?;
                renamed.push(target);
            }
            Ok(())
        };
        let result = stage();
        if result.is_err() {
            for path in tmps.iter().chain(renamed.iter()) {
                let _ = fs::remove_file(path);
            }
        }
        result
    }
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string(value).expect("serializable output");
    text.push('\n');
    text
}

fn default_one() -> f64 {
    1.0
}

fn default_budget_mode() -> BudgetMode {
    BudgetMode::PlainDp
}

fn check_smoothing(s: f64, config_path: &str) -> Result<()> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::InvalidValue(format!(
            "{config_path}: smoothing_s must be finite and nonnegative, got {s}"
        )));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateConfig {
    base_matrix: TransitionMatrix,
    #[serde(default)]
    initial: Option<LocationDistribution>,
    #[serde(default)]
    smoothing_s: f64,
    n_users: u64,
    #[serde(rename = "T")]
    t_len: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Serialize)]
struct TrajectoriesFile {
    n_users: u64,
    #[serde(rename = "T")]
    t_len: usize,
    paths: Vec<Vec<usize>>,
}

fn cmd_generate(ctx: &Context, text: &str) -> Result<()> {
    let config: GenerateConfig = ctx.parse(text)?;
    check_smoothing(config.smoothing_s, &ctx.config_path)?;
    let tm = smooth_correlations(&config.base_matrix, config.smoothing_s);
    let initial = match &config.initial {
        Some(d) => {
            if d.m() != tm.m() {
                return Err(Error::DimensionMismatch(format!(
                    "{}: initial has {} entries but base_matrix has {} locations",
                    ctx.config_path,
                    d.m(),
                    tm.m()
                )));
            }
            d.clone()
        }
        None => LocationDistribution::uniform(tm.m()),
    };
    let seed = ctx.seed.unwrap_or(config.seed);
    let paths = generate_trajectories(&initial, &tm, config.n_users, config.t_len, RandomSeed(seed))?;
    let counts = count_query(&paths, tm.m())?;
    let trajectories =
        TrajectoriesFile { n_users: config.n_users, t_len: config.t_len, paths };
    ctx.write_outputs(&[
        ("trajectories.json", json_line(&trajectories)),
        ("true_counts.json", json_line(&counts)),
    ])
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReleaseConfig {
    counts: PathBuf,
    #[serde(default = "default_one")]
    sensitivity: f64,
    budget: f64,
    #[serde(default = "default_budget_mode")]
    budget_mode: BudgetMode,
    #[serde(default = "default_one")]
    scale_multiplier: f64,
    #[serde(default)]
    seed: u64,
}

fn cmd_release(ctx: &Context, text: &str) -> Result<()> {
    let config: ReleaseConfig = ctx.parse(text)?;
    let truth = ctx.read_stream(&config.counts)?;
    let params = PrivacyParams::new(
        config.sensitivity,
        config.budget,
        config.budget_mode,
        config.scale_multiplier,
    )?;
    let seed = ctx.seed.unwrap_or(config.seed);
    let noisy = release_stream(&truth, &params, RandomSeed(seed))?;
    ctx.write_outputs(&[("noisy_counts.json", json_line(&noisy))])
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PostprocessConfig {
    counts: PathBuf,
    base_matrix: TransitionMatrix,
    #[serde(default)]
    smoothing_s: f64,
    n_users: u64,
    #[serde(default = "default_one")]
    sensitivity: f64,
    budget: f64,
    #[serde(default = "default_budget_mode")]
    budget_mode: BudgetMode,
    #[serde(default = "default_one")]
    scale_multiplier: f64,
    #[serde(default = "default_method")]
    method: Method,
    #[serde(default = "default_conditioning")]
    conditioning: Conditioning,
    #[serde(default = "default_stirling")]
    stirling_mode: StirlingMode,
    #[serde(default = "default_floor")]
    floor: f64,
    #[serde(default = "default_true")]
    hard_pin: bool,
    #[serde(default)]
    integer_release: bool,
    #[serde(default)]
    solver: SolverConfig,
}

fn default_method() -> Method {
    Method::MapFrequency
}

fn default_conditioning() -> Conditioning {
    Conditioning::Filtering
}

fn default_stirling() -> StirlingMode {
    StirlingMode::ExactLogGamma
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR
}

fn default_true() -> bool {
    true
}

#[derive(Serialize)]
struct ReportFile {
    method: Method,
    objective: f64,
    wall_ms: f64,
    steps: Vec<StepReport>,
}

fn cmd_postprocess(ctx: &Context, text: &str) -> Result<()> {
    let config: PostprocessConfig = ctx.parse(text)?;
    check_smoothing(config.smoothing_s, &ctx.config_path)?;
    let noisy = ctx.read_stream(&config.counts)?;
    let tm = smooth_correlations(&config.base_matrix, config.smoothing_s);
    if noisy.m() != tm.m() {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} locations but base_matrix in {} has {}",
            ctx.resolve(&config.counts).display(),
            noisy.m(),
            ctx.config_path,
            tm.m()
        )));
    }
    let params = PrivacyParams::new(
        config.sensitivity,
        config.budget,
        config.budget_mode,
        config.scale_multiplier,
    )?;
    let lambda = laplace_scale(&params);

    let (estimate, report) = match config.method {
        Method::RawNoisy => {
            return Err(Error::InvalidValue(format!(
                "{}: method raw_noisy has nothing to post-process; use map_frequency, map_uniform or baseline_mle",
                ctx.config_path
            )));
        }
        Method::BaselineMle => {
            let started = std::time::Instant::now();
            let (estimate, objective) = postprocess_baseline(&noisy, lambda, config.n_users)?;
            let wall_ms = started.elapsed().as_secs_f64() * 1e3;
            (estimate, ReportFile { method: config.method, objective, wall_ms, steps: Vec::new() })
        }
        Method::MapFrequency | Method::MapUniform => {
            let options = PostprocessOptions {
                policy: config.method.policy().expect("model-based method"),
                conditioning: config.conditioning,
                stirling_mode: config.stirling_mode,
                floor: config.floor,
                hard_pin: config.hard_pin,
                integer_release: config.integer_release,
            };
            let mut solver = config.solver.clone();
            if let Some(seed) = ctx.seed {
                solver.restart_seed = seed;
            }
            let (estimate, report) =
                postprocess_map(&noisy, &tm, config.n_users, lambda, &options, &solver)?;
            let file = ReportFile {
                method: config.method,
                objective: report.total_objective(),
                wall_ms: report.wall_ms,
                steps: report.steps,
            };
            (estimate, file)
        }
    };
    ctx.write_outputs(&[
        ("estimate.json", json_line(&estimate)),
        ("report.json", json_line(&report)),
    ])
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateConfig {
    estimate: PathBuf,
    truth: PathBuf,
    #[serde(default)]
    base_matrix: Option<TransitionMatrix>,
    #[serde(default)]
    smoothing_s: f64,
    #[serde(default = "default_cutoff")]
    plausibility_cutoff: f64,
}

fn default_cutoff() -> f64 {
    1e-10
}

#[derive(Serialize)]
struct MetricsFile {
    mse: f64,
    plausibility_violations: Option<u64>,
}

fn cmd_evaluate(ctx: &Context, text: &str) -> Result<()> {
    let config: EvaluateConfig = ctx.parse(text)?;
    check_smoothing(config.smoothing_s, &ctx.config_path)?;
    let estimate = ctx.read_stream(&config.estimate)?;
    let truth = ctx.read_stream(&config.truth)?;
    if truth.kind() != StreamKind::True {
        return Err(Error::InvalidValue(format!(
            "{}: truth stream must have kind \"true\", got {:?}",
            ctx.resolve(&config.truth).display(),
            truth.kind()
        )));
    }
    let mse = corrdp::metrics::mse(&estimate, &truth)?;

    let n = truth.population().expect("true streams have a population");
    let plausibility_violations = match (&config.base_matrix, estimate.kind()) {
        (Some(base), StreamKind::Estimate) if n <= corrdp::harness::PLAUSIBILITY_MAX_USERS => {
            let tm = smooth_correlations(base, config.smoothing_s);
            let rows: Result<Vec<Vec<f64>>> = (0..estimate.t_len())
                .map(|t| {
                    let rounded = largest_remainder_round(estimate.row(t), n)?;
                    Ok(rounded.into_iter().map(|v| v as f64).collect())
                })
                .collect();
            let rounded = CountStream::new_estimate(rows?)?;
            Some(corrdp::metrics::plausibility_violations(
                &rounded,
                &tm,
                config.plausibility_cutoff,
            )? as u64)
        }
        _ => None,
    };
    ctx.write_outputs(&[(
        "metrics.json",
        json_line(&MetricsFile { mse, plausibility_violations }),
    )])
}

fn cmd_sweep(ctx: &Context, text: &str) -> Result<()> {
    let mut config: ExperimentConfig = ctx.parse(text)?;
    if let Some(seed) = ctx.seed {
        config.seed_base = seed;
    }
    let output = run_sweep(&config)?;
    ctx.write_outputs(&[
        ("rows.csv", rows_csv(&output.rows)),
        ("means.csv", means_csv(&output.means)),
    ])
}
