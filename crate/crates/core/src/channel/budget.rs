//! Verification of attacker power budgets on finite traces.

use crate::error::{invalid, Result};

// Relative slack so budgets that hold with equality in exact arithmetic
// (e.g. 32 * 40 = 1228.8 + 1.28 * 40) are not rejected by rounding.
const REL_TOL: f64 = 1e-9;

#[inline]
fn exceeds(lhs: f64, rhs: f64) -> bool {
    lhs > rhs + REL_TOL * rhs.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetVerdict {
    Satisfied,
    /// The budget fails on `[start, end)`; `excess` is how far the window sum
    /// overshoots `kappa + rate * (end - start)`.
    Violated { start: usize, end: usize, excess: f64 },
}

impl BudgetVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, BudgetVerdict::Satisfied)
    }
}

fn check_trace(trace: &[f64], kappa: f64, rate: f64) -> Result<()> {
    if !(kappa >= 0.0 && rate >= 0.0) {
        return Err(invalid(format!("budget parameters must be nonnegative (kappa {kappa}, rate {rate})")));
    }
    if let Some((i, v)) = trace.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(invalid(format!("interference power at step {i} must be finite and nonnegative, got {v}")));
    }
    Ok(())
}

/// Checks `sum_{i<t} v(i) <= kappa + rate * t` for every `t` in `1..=len`.
/// A violation reports the smallest failing horizon as the window `[0, t)`.
pub fn verify_cumulative_budget(trace: &[f64], kappa: f64, rate: f64) -> Result<BudgetVerdict> {
    check_trace(trace, kappa, rate)?;
    let mut sum = 0.0;
    for (i, v) in trace.iter().enumerate() {
        sum += v;
        let t = (i + 1) as f64;
        let rhs = kappa + rate * t;
        if exceeds(sum, rhs) {
            return Ok(BudgetVerdict::Violated { start: 0, end: i + 1, excess: sum - rhs });
        }
    }
    Ok(BudgetVerdict::Satisfied)
}

/// Checks `sum_{t1<=i<t2} v(i) <= kappa + rate * (t2 - t1)` for every window.
///
/// Equivalent to bounding the maximum-excess window
/// `max_{t1<t2} sum (v(i) - rate)` by `kappa`, found in one pass. A violation
/// reports that maximal window.
pub fn verify_windowed_budget(trace: &[f64], kappa: f64, rate: f64) -> Result<BudgetVerdict> {
    check_trace(trace, kappa, rate)?;
    // Track window sums and lengths rather than accumulated excess so the
    // final comparison is made in the same form as the budget inequality.
    let mut best: Option<(usize, usize, f64)> = None;
    let mut cur_start = 0;
    let mut cur_excess = 0.0;
    for (i, v) in trace.iter().enumerate() {
        if cur_excess <= 0.0 {
            cur_start = i;
            cur_excess = 0.0;
        }
        cur_excess += v - rate;
        if best.is_none_or(|b| cur_excess > b.2) {
            best = Some((cur_start, i + 1, cur_excess));
        }
    }
    let Some((start, end, _)) = best else {
        return Ok(BudgetVerdict::Satisfied);
    };
    let sum: f64 = trace[start..end].iter().sum();
    let rhs = kappa + rate * (end - start) as f64;
    if exceeds(sum, rhs) {
        Ok(BudgetVerdict::Violated { start, end, excess: sum - rhs })
    } else {
        Ok(BudgetVerdict::Satisfied)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Duration {
    Steps(u64),
    Unbounded,
}

/// Longest run of consecutive steps at power `power` a windowed budget
/// `(kappa, rate)` admits: `floor(kappa / (power - rate))` when `power > rate`.
pub fn max_consecutive_duration(kappa: f64, rate: f64, power: f64) -> Duration {
    if !(power > rate) {
        return Duration::Unbounded;
    }
    let ratio = kappa / (power - rate);
    Duration::Steps((ratio + REL_TOL * ratio.max(1.0)).floor() as u64)
}

/// Largest constant power sustainable for `steps` consecutive steps under a
/// windowed budget: `rate + kappa / steps`.
pub fn max_power_for_duration(kappa: f64, rate: f64, steps: u64) -> Result<f64> {
    if steps == 0 {
        return Err(invalid("duration must be at least one step"));
    }
    Ok(rate + kappa / steps as f64)
}
