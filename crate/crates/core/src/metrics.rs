//! Accuracy and consistency metrics for released streams.
//!
//! `mse` measures cellwise squared error against a reference stream.
//! `stepwise_plausibility` scores how believable each transition of an
//! integer stream is under the public chain: the exact probability of
//! observing the next histogram given the current one, obtained by summing
//! over every user flow matrix consistent with the two histograms. The
//! enumeration is exponential in the counts, so it is guarded by a grid
//! cap and meant for small populations.

use crate::error::{Error, Result};
use crate::model::{CountStream, TransitionMatrix};
use crate::special::ln_gamma;

/// Transitions with probability below this are counted as violations.
pub const PLAUSIBILITY_THRESHOLD: f64 = 1e-10;

/// Largest flow grid `stepwise_plausibility` will enumerate.
pub const FLOW_GRID_CAP: u128 = 1_000_000;

/// Mean squared error over all `T * m` cells.
pub fn mse(estimate: &CountStream, reference: &CountStream) -> Result<f64> {
    if estimate.t_len() != reference.t_len() || estimate.m() != reference.m() {
        return Err(Error::ShapeMismatch(format!(
            "streams are {}x{} and {}x{}",
            estimate.t_len(),
            estimate.m(),
            reference.t_len(),
            reference.m()
        )));
    }
    let cells = (estimate.t_len() * estimate.m()) as f64;
    let total: f64 = (0..estimate.t_len())
        .map(|t| {
            estimate
                .row(t)
                .iter()
                .zip(reference.row(t).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    Ok(total / cells)
}

fn integer_rows(stream: &CountStream) -> Result<Vec<Vec<u64>>> {
    let mut rows = Vec::with_capacity(stream.t_len());
    for t in 0..stream.t_len() {
        let mut row = Vec::with_capacity(stream.m());
        for (l, &v) in stream.row(t).iter().enumerate() {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::NonIntegerStream { t, l, value: v });
            }
            row.push(v as u64);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Log factorial, exact for arguments small enough to enumerate flows
/// over. Exactness at 0 and 1 keeps certain transitions at probability
/// exactly 1.
fn ln_factorial(k: u64) -> f64 {
    if k < 2 {
        0.0
    } else if k <= 20 {
        (((2..=k as u128).product::<u128>()) as f64).ln()
    } else {
        ln_gamma(k as f64 + 1.0)
    }
}

fn flow_grid_size(row: &[u64], m: usize) -> u128 {
    // Product over locations of C(count + m - 1, m - 1).
    let mut acc: u128 = 1;
    for &count in row {
        let mut comb: u128 = 1;
        for i in 1..m as u128 {
            comb = comb * (count as u128 + i) / i;
            if comb > FLOW_GRID_CAP {
                return FLOW_GRID_CAP + 1;
            }
        }
        acc = acc.saturating_mul(comb);
        if acc > FLOW_GRID_CAP {
            return FLOW_GRID_CAP + 1;
        }
    }
    acc
}

/// Distributes `remaining` users of one origin row over destinations
/// `j..m`, accumulating the log weight, and recurses into the next origin
/// once the row is fully assigned.
fn assign_flow(
    rows: &[u64],
    row_idx: usize,
    j: usize,
    remaining: u64,
    log_acc: f64,
    col_remaining: &mut [u64],
    tm: &TransitionMatrix,
    prob: &mut f64,
) {
    let m = col_remaining.len();
    if j == m {
        debug_assert_eq!(remaining, 0);
        if row_idx + 1 == rows.len() {
            *prob += log_acc.exp();
        } else {
            let next = rows[row_idx + 1];
            assign_flow(
                rows,
                row_idx + 1,
                0,
                next,
                log_acc + ln_factorial(next),
                col_remaining,
                tm,
                prob,
            );
        }
        return;
    }
    let p = tm.get(row_idx, j);
    // The last destination takes whatever is left; earlier ones range over
    // every split the column targets still allow.
    let (lo, hi) = if j + 1 == m { (remaining, remaining) } else { (0, remaining) };
    for f in lo..=hi.min(col_remaining[j]) {
        if f > 0 && p == 0.0 {
            break;
        }
        let contrib = if f == 0 { 0.0 } else { f as f64 * p.ln() - ln_factorial(f) };
        col_remaining[j] -= f;
        assign_flow(rows, row_idx, j + 1, remaining - f, log_acc + contrib, col_remaining, tm, prob);
        col_remaining[j] += f;
    }
}

fn transition_probability(from: &[u64], to: &[u64], tm: &TransitionMatrix) -> f64 {
    let mut col_remaining = to.to_vec();
    let mut prob = 0.0;
    let first = from[0];
    assign_flow(from, 0, 0, first, ln_factorial(first), &mut col_remaining, tm, &mut prob);
    prob
}

/// Probability of each consecutive transition of an integer stream under
/// the chain. Returns `T - 1` values.
pub fn stepwise_plausibility(stream: &CountStream, tm: &TransitionMatrix) -> Result<Vec<f64>> {
    if stream.m() != tm.m() {
        return Err(Error::DimensionMismatch(format!(
            "stream has {} locations but the chain has {}",
            stream.m(),
            tm.m()
        )));
    }
    let rows = integer_rows(stream)?;
    let totals: Vec<u64> = rows.iter().map(|r| r.iter().sum()).collect();
    if let Some(t) = totals.windows(2).position(|w| w[0] != w[1]) {
        return Err(Error::InvalidValue(format!(
            "population changes from {} to {} at t={}",
            totals[t],
            totals[t + 1],
            t + 1
        )));
    }
    for (t, row) in rows.iter().enumerate() {
        let size = flow_grid_size(row, stream.m());
        if size > FLOW_GRID_CAP {
            return Err(Error::InstanceTooLarge(format!(
                "flow grid at t={t} exceeds {FLOW_GRID_CAP} candidate matrices"
            )));
        }
    }
    Ok(rows.windows(2).map(|pair| transition_probability(&pair[0], &pair[1], tm)).collect())
}

/// Number of transitions whose probability falls below `threshold`.
pub fn plausibility_violations(
    stream: &CountStream,
    tm: &TransitionMatrix,
    threshold: f64,
) -> Result<usize> {
    Ok(stepwise_plausibility(stream, tm)?.iter().filter(|&&p| p < threshold).count())
}
