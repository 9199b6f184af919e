//! Monte Carlo estimators over independent runs.
//!
//! Runs are grouped into fixed-size chunks that are processed in parallel and
//! then merged in run-index order, so every estimate is bitwise reproducible
//! regardless of the number of worker threads.

use rayon::prelude::*;

use super::rng::RunKey;
use super::stats::{paired_difference, wilson_interval, MeanEstimate, Welford, Z95, Z95_ONE_SIDED};
use super::{Kernel, SimConfig};
use crate::analysis::{Condition, StabilityCertificate};
use crate::channel::{failure_probability_unchecked, verify_cumulative_budget, verify_windowed_budget, BudgetVerdict};
use crate::error::{invalid, Error, Result};
use crate::model::{BudgetKind, DisturbanceModel};

const CHUNK: usize = 256;

/// Maps every run index through `per_run` into chunk accumulators, then
/// merges the chunks in order.
fn ensemble<S, I, F, M>(n_runs: usize, init: I, per_run: F, merge: M) -> S
where
    S: Send,
    I: Fn() -> S + Sync,
    F: Fn(&mut S, u64) + Sync,
    M: Fn(&mut S, S),
{
    let n_chunks = n_runs.div_ceil(CHUNK);
    let parts: Vec<S> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for run in c * CHUNK..((c + 1) * CHUNK).min(n_runs) {
                per_run(&mut acc, run as u64);
            }
            acc
        })
        .collect();
    let mut parts = parts.into_iter();
    let mut total = parts.next().unwrap_or_else(&init);
    for p in parts {
        merge(&mut total, p);
    }
    total
}

fn merge_series(into: &mut [Welford], from: &[Welford]) {
    into.iter_mut().zip(from).for_each(|(a, b)| a.merge(b));
}

fn euclid(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Per-step sample mean and standard error of `||x(t)||_2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSeries {
    pub t: Vec<u64>,
    pub mean_norm: Vec<f64>,
    pub std_err: Vec<f64>,
    pub n_runs: usize,
}

impl MomentSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Index and value of the largest mean.
    pub fn peak(&self) -> Option<(usize, f64)> {
        self.mean_norm
            .iter()
            .copied()
            .enumerate()
            .fold(None, |best, (i, m)| match best {
                Some((_, b)) if b >= m => best,
                _ => Some((i, m)),
            })
    }

    /// `sum_t mean_norm(t)`.
    pub fn cumulative(&self) -> f64 {
        self.mean_norm.iter().sum()
    }
}

pub fn monte_carlo_first_moment(config: &SimConfig) -> Result<MomentSeries> {
    let kernel = Kernel::new(config)?;
    let h = config.horizon;
    let acc = ensemble(
        config.n_runs,
        || vec![Welford::default(); h],
        |acc, run| kernel.run(run, h, |s| acc[s.t as usize].push(euclid(s.x))),
        |a, b| merge_series(a, &b),
    );
    Ok(MomentSeries {
        t: (0..h as u64).collect(),
        mean_norm: acc.iter().map(Welford::mean).collect(),
        std_err: acc.iter().map(Welford::std_err).collect(),
        n_runs: config.n_runs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExceedanceEstimate {
    pub tau: u64,
    pub threshold: f64,
    pub successes: u64,
    pub n_runs: u64,
    pub probability: f64,
    /// Wilson 95% interval.
    pub lower: f64,
    pub upper: f64,
}

/// Frequency of `x(tau) > z` for scalar plants, `||x(tau)||_2 > z` otherwise.
pub fn estimate_exceedance_probability(config: &SimConfig, z: f64, tau: u64) -> Result<ExceedanceEstimate> {
    if tau >= config.horizon as u64 {
        return Err(invalid(format!("tau {tau} must be below the horizon {}", config.horizon)));
    }
    if z.is_nan() {
        return Err(invalid("threshold must not be NaN"));
    }
    let kernel = Kernel::new(config)?;
    let scalar = config.plant.state_dim() == 1;
    let steps = tau as usize + 1;
    let successes = ensemble(
        config.n_runs,
        || 0u64,
        |acc, run| {
            kernel.run(run, steps, |s| {
                if s.t == tau {
                    let value = if scalar { s.x[0] } else { euclid(s.x) };
                    *acc += u64::from(value > z);
                }
            })
        },
        |a, b| *a += b,
    );
    let n = config.n_runs as u64;
    let (lower, upper) = wilson_interval(successes, n, Z95);
    Ok(ExceedanceEstimate {
        tau,
        threshold: z,
        successes,
        n_runs: n,
        probability: successes as f64 / n as f64,
        lower,
        upper,
    })
}

/// Disturbance magnitude entering a moment bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisturbanceLevel {
    /// No disturbance; only the decaying term is claimed.
    None,
    /// `||w(t)||_2 <= w_bar` almost surely.
    Bounded(f64),
    /// `E ||w(t)||_2^2 <= w_tilde`.
    SecondMoment(f64),
}

impl DisturbanceLevel {
    /// Level implied by the disturbance model for the given condition.
    pub fn for_model(condition: Condition, model: &DisturbanceModel, plant: &crate::model::PlantModel) -> Option<Self> {
        if model.is_none() {
            return Some(Self::None);
        }
        match condition {
            Condition::BoundedDisturbance => model.norm_bound(plant).map(Self::Bounded),
            Condition::SecondMoment => model.second_moment_bound(plant).map(Self::SecondMoment),
            _ => None,
        }
    }

    fn scale(&self) -> f64 {
        match *self {
            Self::None => 0.0,
            Self::Bounded(w) => w,
            Self::SecondMoment(w) => w.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundStep {
    pub t: u64,
    pub mean_norm: f64,
    pub std_err: f64,
    pub bound: f64,
    /// `bound - (mean_norm - 3 std_err)`; negative means the step fails.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub condition: Condition,
    pub steps: Vec<BoundStep>,
    pub passed: bool,
    pub worst: Option<BoundStep>,
}

/// Compares the Monte Carlo mean norm with the analytic bound of `certificate`
/// at every step. Refuses to run when the attack schedule or the disturbance
/// falls outside what the bound assumes.
pub fn moment_bound_check(
    config: &SimConfig,
    certificate: &StabilityCertificate,
    level: DisturbanceLevel,
) -> Result<BoundReport> {
    let constants = certificate
        .constants
        .ok_or_else(|| invalid("certificate carries no bound constants"))?;
    let condition = certificate.condition;
    let trace = config.strategy.trace(config.horizon);
    let verdict = match condition.budget_kind() {
        BudgetKind::Cumulative => verify_cumulative_budget(&trace, certificate.kappa, certificate.level)?,
        BudgetKind::Windowed => verify_windowed_budget(&trace, certificate.kappa, certificate.level)?,
    };
    if let BudgetVerdict::Violated { start, end, .. } = verdict {
        return Err(Error::BudgetViolated { start, end });
    }
    check_disturbance(config, condition, constants.ln_gain.is_some(), level)?;

    let series = monte_carlo_first_moment(config)?;
    let x0 = euclid(config.plant.x0().as_slice());
    let scale = level.scale();
    let steps: Vec<BoundStep> = (0..series.len())
        .map(|i| {
            let t = series.t[i];
            let bound = if x0 == 0.0 && scale == 0.0 { 0.0 } else { constants.bound(t, x0, scale) };
            let (mean_norm, std_err) = (series.mean_norm[i], series.std_err[i]);
            BoundStep { t, mean_norm, std_err, bound, margin: bound - (mean_norm - 3.0 * std_err) }
        })
        .collect();
    let worst = steps.iter().copied().min_by(|a, b| a.margin.total_cmp(&b.margin));
    Ok(BoundReport { condition, passed: steps.iter().all(|s| s.margin >= 0.0), steps, worst })
}

fn check_disturbance(config: &SimConfig, condition: Condition, has_gain: bool, level: DisturbanceLevel) -> Result<()> {
    let model = &config.disturbance;
    let plant = &config.plant;
    match level {
        DisturbanceLevel::None if model.is_none() => Ok(()),
        DisturbanceLevel::None => Err(invalid("a disturbance is simulated but no disturbance level was given")),
        _ if !has_gain => Err(invalid(format!("the {condition} bound does not cover disturbances"))),
        DisturbanceLevel::Bounded(w) => {
            if condition != Condition::BoundedDisturbance {
                return Err(invalid(format!("an almost-sure disturbance bound does not apply to {condition}")));
            }
            match model.norm_bound(plant) {
                Some(b) if b <= w * (1.0 + 1e-12) => Ok(()),
                Some(b) => Err(invalid(format!("disturbance norm bound {b} exceeds the claimed level {w}"))),
                None => Err(invalid("disturbance has unbounded support")),
            }
        }
        DisturbanceLevel::SecondMoment(w) => {
            if condition != Condition::SecondMoment {
                return Err(invalid(format!("a second-moment disturbance level does not apply to {condition}")));
            }
            match model.second_moment_bound(plant) {
                Some(b) if b <= w * (1.0 + 1e-12) => Ok(()),
                Some(b) => Err(invalid(format!("disturbance second moment {b} exceeds the claimed level {w}"))),
                None => Err(invalid("disturbance second moment is unknown")),
            }
        }
    }
}

/// Moments of the window products `prod_{i=end-len}^{end-1} (g1 l(i) + g0)`
/// for `len = 1..=max_len`, all windows ending at the same step.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowProducts {
    pub end: u64,
    /// Index `k` holds window length `k + 1`.
    pub product: Vec<MeanEstimate>,
    pub product_sq: Vec<MeanEstimate>,
    /// Per-run partial sums `sum_{len<=L} prod`, averaged over runs.
    pub partial_sum: Vec<MeanEstimate>,
}

impl WindowProducts {
    /// `sum_{len<=L} sqrt(E prod^2)` with a conservative standard error.
    pub fn root_partial_sum(&self, max_len: usize) -> MeanEstimate {
        let mut mean = 0.0;
        let mut se = 0.0;
        for e in &self.product_sq[..max_len] {
            let r = e.mean.max(0.0).sqrt();
            mean += r;
            if r > 0.0 {
                se += e.std_err / (2.0 * r);
            }
        }
        MeanEstimate { mean, std_err: se, n: self.product_sq.first().map_or(0, |e| e.n) }
    }
}

/// Failure indicators are drawn from the same streams the simulator uses, so
/// these are the products a simulated run of `config` experiences.
pub fn window_product_moments(
    config: &SimConfig,
    g1: f64,
    g0: f64,
    end: u64,
    max_len: usize,
) -> Result<WindowProducts> {
    config.validate()?;
    if max_len == 0 || max_len as u64 > end {
        return Err(invalid(format!("window lengths 1..={max_len} must fit before step {end}")));
    }
    if config.countermeasure.is_some() {
        return Err(invalid("window products assume the nominal transmission power"));
    }
    let start = end - max_len as u64;
    let probs: Vec<f64> = (start..end)
        .map(|t| failure_probability_unchecked(config.strategy.power_at(t), &config.channel))
        .collect();
    let forced = config.forced_link;
    type Acc = (Vec<Welford>, Vec<Welford>, Vec<Welford>);
    let (prod, sq, sums): Acc = ensemble(
        config.n_runs,
        || (vec![Welford::default(); max_len], vec![Welford::default(); max_len], vec![Welford::default(); max_len]),
        |acc, run| {
            let key = RunKey::new(config.base_seed, run);
            let mut p = 1.0;
            let mut s = 0.0;
            for k in 0..max_len {
                let t = end - 1 - k as u64;
                let failed = forced.unwrap_or(key.failure_draw(t) <= probs[(t - start) as usize]);
                p *= if failed { g1 + g0 } else { g0 };
                s += p;
                acc.0[k].push(p);
                acc.1[k].push(p * p);
                acc.2[k].push(s);
            }
        },
        |a, b| {
            merge_series(&mut a.0, &b.0);
            merge_series(&mut a.1, &b.1);
            merge_series(&mut a.2, &b.2);
        },
    );
    let est = |v: Vec<Welford>| v.iter().map(Welford::estimate).collect();
    Ok(WindowProducts { end, product: est(prod), product_sq: est(sq), partial_sum: est(sums) })
}

/// Per-run totals `sum_t ||x(t)||_2` and `sum_t xi(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunTotals {
    pub run: u64,
    pub norm: f64,
    pub power: f64,
}

pub fn cumulative_totals(config: &SimConfig) -> Result<Vec<RunTotals>> {
    let kernel = Kernel::new(config)?;
    let h = config.horizon;
    Ok(ensemble(
        config.n_runs,
        Vec::new,
        |acc: &mut Vec<RunTotals>, run| {
            let mut totals = RunTotals { run, norm: 0.0, power: 0.0 };
            kernel.run(run, h, |s| {
                totals.norm += euclid(s.x);
                totals.power += s.xi;
            });
            acc.push(totals);
        },
        |a, b| a.extend(b),
    ))
}

/// Paired comparison of cumulative norms between a treated and a baseline
/// ensemble sharing seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CumulativeSummary {
    pub mean_norm: f64,
    pub baseline_norm: f64,
    pub mean_power: f64,
    pub baseline_power: f64,
    /// `treated - baseline` norm difference.
    pub difference: MeanEstimate,
    /// One-sided 95% upper confidence bound of the difference.
    pub upper: f64,
    /// The treated ensemble has a smaller cumulative norm at 95%.
    pub reduced: bool,
}

pub fn summarize_totals(treated: &[RunTotals], baseline: &[RunTotals]) -> Result<CumulativeSummary> {
    if treated.len() != baseline.len() || treated.iter().zip(baseline).any(|(a, b)| a.run != b.run) {
        return Err(invalid("paired ensembles must cover the same runs"));
    }
    let norms = |v: &[RunTotals]| v.iter().map(|r| r.norm).collect::<Vec<_>>();
    let powers = |v: &[RunTotals]| MeanEstimate::from_samples(&v.iter().map(|r| r.power).collect::<Vec<_>>()).mean;
    let a = norms(treated);
    let b = norms(baseline);
    let difference = paired_difference(&a, &b);
    let upper = difference.mean + Z95_ONE_SIDED * difference.std_err;
    Ok(CumulativeSummary {
        mean_norm: MeanEstimate::from_samples(&a).mean,
        baseline_norm: MeanEstimate::from_samples(&b).mean,
        mean_power: powers(treated),
        baseline_power: powers(baseline),
        difference,
        upper,
        reduced: upper < 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{bound_constants_prop1, NormContext};
    use crate::attacks::constant_strategy;
    use crate::channel::PHatEnvelope;
    use crate::presets::{benchmark_channel, benchmark_p, benchmark_plant};

    fn config(horizon: usize, n_runs: usize) -> SimConfig {
        SimConfig::new(
            benchmark_plant(),
            benchmark_channel(),
            constant_strategy(1.28).unwrap(),
            DisturbanceModel::Uniform { half_width: 0.5 },
            horizon,
            n_runs,
            9,
        )
        .unwrap()
    }

    #[test]
    fn chunked_merge_is_independent_of_thread_count() {
        let cfg = config(40, 600);
        let a = monte_carlo_first_moment(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| monte_carlo_first_moment(&cfg).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
        assert!(a.std_err[0] == 0.0 && (a.mean_norm[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn exceedance_edge_cases() {
        let cfg = config(10, 50);
        assert!(estimate_exceedance_probability(&cfg, 1.0, 10).is_err());
        let e = estimate_exceedance_probability(&cfg, 1.4, 0).unwrap();
        assert_eq!(e.successes, 50);
        let e = estimate_exceedance_probability(&cfg, 1.5, 0).unwrap();
        assert_eq!(e.successes, 0);
        assert!(e.lower == 0.0 && e.upper > 0.0);
    }

    #[test]
    fn bound_check_refuses_uncovered_disturbance() {
        let ctx = NormContext::new(benchmark_p()).unwrap();
        let env = PHatEnvelope::shifted(benchmark_channel()).unwrap();
        let cert = bound_constants_prop1(&benchmark_plant(), &ctx, &env, 0.0, 1.28).unwrap();
        let cfg = config(20, 10);
        assert!(moment_bound_check(&cfg, &cert, DisturbanceLevel::None).is_err());
        assert!(moment_bound_check(&cfg, &cert, DisturbanceLevel::Bounded(1.0)).is_err());
        let mut quiet = cfg.clone();
        quiet.disturbance = DisturbanceModel::None;
        quiet.strategy = constant_strategy(1.5).unwrap();
        assert!(matches!(
            moment_bound_check(&quiet, &cert, DisturbanceLevel::None),
            Err(Error::BudgetViolated { start: 0, end: 1 })
        ));
    }

    #[test]
    fn zero_state_bound_is_trivial() {
        let ctx = NormContext::new(benchmark_p()).unwrap();
        let env = PHatEnvelope::shifted(benchmark_channel()).unwrap();
        let cert = bound_constants_prop1(&benchmark_plant(), &ctx, &env, 0.0, 1.28).unwrap();
        let mut cfg = config(30, 20);
        cfg.disturbance = DisturbanceModel::None;
        cfg.plant = cfg.plant.with_x0(&[0.0, 0.0]).unwrap();
        let report = moment_bound_check(&cfg, &cert, DisturbanceLevel::None).unwrap();
        assert!(report.passed);
        assert!(report.steps.iter().all(|s| s.mean_norm == 0.0 && s.bound == 0.0));
    }

    #[test]
    fn window_products_with_forced_link() {
        let mut cfg = config(10, 30);
        cfg.forced_link = Some(true);
        let w = window_product_moments(&cfg, 0.5, 0.25, 8, 4).unwrap();
        for (k, e) in w.product.iter().enumerate() {
            assert!((e.mean - 0.75f64.powi(k as i32 + 1)).abs() < 1e-15);
            assert_eq!(e.std_err, 0.0);
        }
        let total: f64 = (1..=4).map(|k| 0.75f64.powi(k)).sum();
        assert!((w.partial_sum[3].mean - total).abs() < 1e-14);
        assert!(window_product_moments(&cfg, 0.5, 0.25, 3, 4).is_err());
    }

    #[test]
    fn totals_pair_by_run() {
        let cfg = config(30, 20);
        let a = cumulative_totals(&cfg).unwrap();
        assert_eq!(a.len(), 20);
        assert!(a.iter().enumerate().all(|(i, r)| r.run == i as u64 && r.power == 90.0));
        let s = summarize_totals(&a, &a).unwrap();
        assert_eq!(s.difference.mean, 0.0);
        assert!(!s.reduced);
        assert!(summarize_totals(&a[1..], &a[1..]).is_ok());
        assert!(summarize_totals(&a[1..], &a[..19]).is_err());
    }
}
