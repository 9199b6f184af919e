//! Attack schedule generators.

use crate::channel::{failure_probability_unchecked, inverse_failure_probability};
use crate::error::{invalid, Result};
use crate::model::{AttackStrategy, Budget, BudgetKind, ChannelParams, Schedule};

const INVERSE_TOL: f64 = 1e-10;

/// Inputs of the sleep-then-jam construction for a scalar plant with open-loop
/// gain `open_loop_gain > 1` and constant disturbance `disturbance > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SleepJamParams {
    /// Long-run average power the schedule must respect.
    pub rate: f64,
    /// Probability with which the state must exceed `target`.
    pub rho: f64,
    /// State level to exceed.
    pub target: f64,
    pub disturbance: f64,
    pub open_loop_gain: f64,
}

impl SleepJamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(invalid(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        for (name, v) in [("rate", self.rate), ("target", self.target), ("disturbance", self.disturbance)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.open_loop_gain.is_finite() && self.open_loop_gain > 1.0) {
            return Err(invalid(format!("open-loop gain must exceed 1, got {}", self.open_loop_gain)));
        }
        Ok(())
    }
}

/// Sleep for `sleep` steps, then jam at `power` for `jam` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SleepJamStrategy {
    pub strategy: AttackStrategy,
    pub sleep: u64,
    pub jam: u64,
    pub power: f64,
}

impl SleepJamStrategy {
    /// Step at which the exceedance guarantee applies.
    pub fn strike_time(&self) -> u64 {
        self.sleep + self.jam
    }
}

/// Builds the sleep-then-jam schedule that keeps the average power at most
/// `rate` while driving the scalar state above `target` with probability
/// larger than `rho` at `sleep + jam`.
///
/// `jam = floor(max(log_A(target / w), 0)) + 1` steps of power
/// `p^{-1}(rho^{1/jam}) + 1`, preceded by
/// `sleep = floor(max(power - rate, 0) * jam / rate) + 1` idle steps.
pub fn sleep_jam_strategy(params: &SleepJamParams, channel: &ChannelParams) -> Result<SleepJamStrategy> {
    params.validate()?;
    let log_ratio = (params.target / params.disturbance).ln() / params.open_loop_gain.ln();
    let jam = log_ratio.max(0.0).floor() as u64 + 1;
    let per_step = params.rho.powf(1.0 / jam as f64);
    let power = inverse_failure_probability(per_step, channel, INVERSE_TOL)? + 1.0;
    let sleep = ((power - params.rate).max(0.0) * jam as f64 / params.rate).floor() as u64 + 1;
    let strategy = AttackStrategy::new(
        Schedule::Burst { start: sleep, len: jam, power, period: None },
        vec![Budget { kind: BudgetKind::Cumulative, kappa: 0.0, rate: params.rate }],
    )?;
    Ok(SleepJamStrategy { strategy, sleep, jam, power })
}

/// Per-step failure probability the sleep-jam burst achieves, `p(power)`.
pub fn burst_failure_probability(s: &SleepJamStrategy, channel: &ChannelParams) -> f64 {
    failure_probability_unchecked(s.power, channel)
}

/// Jams every step at `power`; declares both budget kinds with `kappa = 0`.
pub fn constant_strategy(power: f64) -> Result<AttackStrategy> {
    AttackStrategy::new(
        Schedule::Constant(power),
        vec![
            Budget { kind: BudgetKind::Cumulative, kappa: 0.0, rate: power },
            Budget { kind: BudgetKind::Windowed, kappa: 0.0, rate: power },
        ],
    )
}

/// `power` on `[sleep, sleep + jam)`, repeating every `period` steps if given.
pub fn explicit_strategy(sleep: u64, jam: u64, power: f64, period: Option<u64>) -> Result<AttackStrategy> {
    if jam == 0 {
        return Err(invalid("jam duration must be positive"));
    }
    if let Some(p) = period {
        if p < sleep + jam {
            return Err(invalid(format!("period {p} is shorter than sleep + jam = {}", sleep + jam)));
        }
    }
    AttackStrategy::new(Schedule::Burst { start: sleep, len: jam, power, period }, vec![])
}
