//! Core data types shared by every stage of the release pipeline.
//!
//! All types validate their invariants at construction, including when
//! deserialized, so a value that exists is a value that is well formed.
//! Matrices serialize as row-major arrays of arrays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for row sums of stochastic objects (matrix rows, distributions).
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Tolerance for row sums of real-valued estimate streams.
pub const ESTIMATE_ROW_TOL: f64 = 1e-6;

/// Row-stochastic transition matrix over `m` locations.
///
/// Entry `(i, j)` is the probability that a user at location `i` moves to
/// location `j` in one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransitionMatrixRaw")]
pub struct TransitionMatrix {
    m: usize,
    rows: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct TransitionMatrixRaw {
    m: usize,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<TransitionMatrixRaw> for TransitionMatrix {
    type Error = Error;

    fn try_from(raw: TransitionMatrixRaw) -> Result<Self> {
        let tm = validate_transition_matrix(raw.rows)?;
        if tm.m != raw.m {
            return Err(Error::DimensionMismatch(format!(
                "declared m = {} but rows describe {} locations",
                raw.m, tm.m
            )));
        }
        Ok(tm)
    }
}

/// Checks squareness, nonnegativity and row sums, and builds the matrix.
pub fn validate_transition_matrix(rows: Vec<Vec<f64>>) -> Result<TransitionMatrix> {
    let m = rows.len();
    if m == 0 {
        return Err(Error::DimensionMismatch("matrix has no rows".into()));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "row {} has {} entries, expected {}",
                i,
                row.len(),
                m
            )));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidValue(format!("entry ({i}, {j}) is not finite")));
            }
            if v < 0.0 {
                return Err(Error::NegativeEntry { row: i, col: j, value: v });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::RowNotStochastic { row: i, sum });
        }
    }
    Ok(TransitionMatrix { m, rows })
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        validate_transition_matrix(rows)
    }

    pub fn identity(m: usize) -> Self {
        let rows = (0..m)
            .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        TransitionMatrix { m, rows }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }
}

/// Probability distribution over the `m` locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LocationDistributionRaw")]
pub struct LocationDistribution {
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct LocationDistributionRaw {
    probs: Vec<f64>,
}

impl TryFrom<LocationDistributionRaw> for LocationDistribution {
    type Error = Error;

    fn try_from(raw: LocationDistributionRaw) -> Result<Self> {
        LocationDistribution::new(raw.probs)
    }
}

impl LocationDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::DimensionMismatch("distribution has no entries".into()));
        }
        for (j, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidValue(format!("probability {j} is not finite")));
            }
            if p < 0.0 {
                return Err(Error::NegativeEntry { row: 0, col: j, value: p });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::RowNotStochastic { row: 0, sum });
        }
        Ok(LocationDistribution { probs })
    }

    pub fn uniform(m: usize) -> Self {
        LocationDistribution { probs: vec![1.0 / m as f64; m] }
    }

    pub fn m(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// What a count stream holds: exact counts, noisy releases, or estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    True,
    Noisy,
    Estimate,
}

/// A `T x m` stream of per-timestep location counts.
///
/// Row `t` holds the counts for all `m` locations at timestep `t`.
/// Invariants depend on the kind: `true` rows are nonnegative integers with
/// a common sum `n`, `estimate` rows are nonnegative reals summing to `n`
/// within [`ESTIMATE_ROW_TOL`], and `noisy` rows are unconstrained reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CountStreamRaw")]
pub struct CountStream {
    #[serde(rename = "T")]
    t_len: usize,
    m: usize,
    kind: StreamKind,
    values: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct CountStreamRaw {
    #[serde(rename = "T")]
    t_len: usize,
    m: usize,
    kind: StreamKind,
    values: Vec<Vec<f64>>,
}

impl TryFrom<CountStreamRaw> for CountStream {
    type Error = Error;

    fn try_from(raw: CountStreamRaw) -> Result<Self> {
        let cs = CountStream::new(raw.kind, raw.values)?;
        if cs.t_len != raw.t_len || cs.m != raw.m {
            return Err(Error::ShapeMismatch(format!(
                "declared {}x{} but values are {}x{}",
                raw.t_len, raw.m, cs.t_len, cs.m
            )));
        }
        Ok(cs)
    }
}

impl CountStream {
    pub fn new(kind: StreamKind, values: Vec<Vec<f64>>) -> Result<Self> {
        let t_len = values.len();
        if t_len == 0 {
            return Err(Error::ShapeMismatch("stream has no timesteps".into()));
        }
        let m = values[0].len();
        if m == 0 {
            return Err(Error::ShapeMismatch("stream has no locations".into()));
        }
        for (t, row) in values.iter().enumerate() {
            if row.len() != m {
                return Err(Error::ShapeMismatch(format!(
                    "row {} has {} entries, expected {}",
                    t,
                    row.len(),
                    m
                )));
            }
            for (l, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidValue(format!(
                        "stream entry at t={t}, l={l} is not finite"
                    )));
                }
            }
        }
        match kind {
            StreamKind::True => {
                let mut n0 = None;
                for (t, row) in values.iter().enumerate() {
                    let mut sum = 0.0;
                    for (l, &v) in row.iter().enumerate() {
                        if v < 0.0 || v.fract() != 0.0 {
                            return Err(Error::NonIntegerStream { t, l, value: v });
                        }
                        sum += v;
                    }
                    match n0 {
                        None => n0 = Some(sum),
                        Some(n) if n != sum => {
                            return Err(Error::InvalidValue(format!(
                                "row {t} sums to {sum}, expected the population {n}"
                            )));
                        }
                        _ => {}
                    }
                }
            }
            StreamKind::Estimate => {
                let n = values[0].iter().sum::<f64>().round();
                for (t, row) in values.iter().enumerate() {
                    for (l, &v) in row.iter().enumerate() {
                        if v < 0.0 {
                            return Err(Error::NegativeEntry { row: t, col: l, value: v });
                        }
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - n).abs() > ESTIMATE_ROW_TOL {
                        return Err(Error::InvalidValue(format!(
                            "estimate row {t} sums to {sum}, expected the population {n}"
                        )));
                    }
                }
            }
            StreamKind::Noisy => {}
        }
        Ok(CountStream { t_len, m, kind, values })
    }

    pub fn new_true(values: Vec<Vec<f64>>) -> Result<Self> {
        CountStream::new(StreamKind::True, values)
    }

    pub fn new_noisy(values: Vec<Vec<f64>>) -> Result<Self> {
        CountStream::new(StreamKind::Noisy, values)
    }

    pub fn new_estimate(values: Vec<Vec<f64>>) -> Result<Self> {
        CountStream::new(StreamKind::Estimate, values)
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> StreamKind {
        self.kind
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t]
    }

    /// Common row sum for `true` and `estimate` streams, rounded to the
    /// nearest integer for the latter.
    pub fn population(&self) -> Option<u64> {
        match self.kind {
            StreamKind::Noisy => None,
            _ => Some(self.values[0].iter().sum::<f64>().round() as u64),
        }
    }
}

/// How the privacy budget is interpreted when calibrating noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Standard per-release differential privacy with scale `sensitivity / budget`.
    PlainDp,
    /// Correlation-aware accounting, modeled as a configurable inflation of
    /// the plain scale by `scale_multiplier`.
    TemporalDp,
}

/// Parameters of one Laplace release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PrivacyParamsRaw")]
pub struct PrivacyParams {
    sensitivity: f64,
    budget: f64,
    mode: BudgetMode,
    scale_multiplier: f64,
}

#[derive(Deserialize)]
struct PrivacyParamsRaw {
    sensitivity: f64,
    budget: f64,
    mode: BudgetMode,
    #[serde(default = "default_multiplier")]
    scale_multiplier: f64,
}

fn default_multiplier() -> f64 {
    1.0
}

impl TryFrom<PrivacyParamsRaw> for PrivacyParams {
    type Error = Error;

    fn try_from(raw: PrivacyParamsRaw) -> Result<Self> {
        PrivacyParams::new(raw.sensitivity, raw.budget, raw.mode, raw.scale_multiplier)
    }
}

impl PrivacyParams {
    pub fn new(sensitivity: f64, budget: f64, mode: BudgetMode, scale_multiplier: f64) -> Result<Self> {
        if !(sensitivity.is_finite() && sensitivity > 0.0) {
            return Err(Error::InvalidValue(format!("sensitivity must be positive, got {sensitivity}")));
        }
        if !(budget.is_finite() && budget > 0.0) {
            return Err(Error::InvalidValue(format!("budget must be positive, got {budget}")));
        }
        if !(scale_multiplier.is_finite() && scale_multiplier > 0.0) {
            return Err(Error::InvalidValue(format!(
                "scale_multiplier must be positive, got {scale_multiplier}"
            )));
        }
        Ok(PrivacyParams { sensitivity, budget, mode, scale_multiplier })
    }

    pub fn plain(sensitivity: f64, budget: f64) -> Result<Self> {
        PrivacyParams::new(sensitivity, budget, BudgetMode::PlainDp, 1.0)
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn mode(&self) -> BudgetMode {
        self.mode
    }

    pub fn scale_multiplier(&self) -> f64 {
        self.scale_multiplier
    }
}

/// Which distribution seeds the Markov propagation at the first timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorPolicy {
    /// Normalized clamped frequencies of the first noisy release.
    Frequency,
    /// Uniform over the `m` locations.
    Uniform,
}
