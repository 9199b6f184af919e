//! Config-driven experiment runner behind the `jamsim` binary.
//!
//! Exit codes: 0 success, 2 configuration error, 3 budget verification
//! failure, 4 compute cap exceeded, 5 I/O failure.

pub mod config;
pub mod output;
mod reproduce;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::analysis::{
    bound_constants_prop1, bound_constants_thm1, bound_constants_thm2, check_condition, max_admissible_v, Condition,
    LevelStatus, LoopNorms, NormContext, StabilityCertificate,
};
use crate::channel::{failure_probability_unchecked, verify_cumulative_budget, verify_windowed_budget, BudgetVerdict};
use crate::error::Error;
use crate::model::{BudgetKind, PlantModel};
use crate::sim::{
    estimate_exceedance_probability, monte_carlo_first_moment, moment_bound_check, simulate_trajectory,
    DisturbanceLevel, SimConfig,
};

pub use config::{BoundChoice, ChannelSpec, ExperimentSpec, DEFAULT_COMPUTE_CAP};
pub use reproduce::reproduce_paper;

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "JAMSIM_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("budget verification failed: {0}")]
    Budget(String),
    #[error("compute cap exceeded: {requested} step-runs requested, cap is {cap} (set run.compute_cap to raise it)")]
    ComputeCap { requested: u128, cap: u64 },
    #[error("I/O error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config { field: field.into(), message: message.into() }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::Io { path: path.to_path_buf(), message: err.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::Budget(_) => 3,
            Self::ComputeCap { .. } => 4,
            Self::Io { .. } => 5,
        }
    }

    /// Maps a library error raised while evaluating `field`.
    fn from_model(field: &str, err: Error) -> Self {
        match err {
            Error::BudgetViolated { start, end } => {
                Self::Budget(format!("attack schedule violates the budget on window [{start}, {end})"))
            }
            Error::TStarDiverged { cap } => Self::ComputeCap { requested: u128::from(cap) + 1, cap },
            other => Self::config(field, other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Analyze,
    Simulate,
    VerifyBudget,
    ReproducePaper,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Analyze => "analyze",
            Mode::Simulate => "simulate",
            Mode::VerifyBudget => "verify-budget",
            Mode::ReproducePaper => "reproduce-paper",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Mode::Analyze, Mode::Simulate, Mode::VerifyBudget, Mode::ReproducePaper].into_iter().find(|m| m.name() == s)
    }
}

/// Command-line values that take precedence over the experiment file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub report: String,
}

/// Builds the global worker pool from [`WORKERS_ENV`] if it is set.
pub fn configure_workers() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::config(WORKERS_ENV, format!("expected a positive integer, got `{raw}`")))?;
    // A pool that already exists keeps its size; results do not depend on it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run_experiment(mode: Mode, spec_path: &Path, overrides: &Overrides) -> Result<Outcome, CliError> {
    let mut spec = ExperimentSpec::from_path(spec_path)?;
    if let Some(m) = spec.mode {
        if m != mode {
            return Err(CliError::config(
                "mode",
                format!("spec declares `{}` but `{}` was requested", m.name(), mode.name()),
            ));
        }
    }
    if let Some(seed) = overrides.seed {
        spec.run.seed = seed;
    }
    if let Some(runs) = overrides.runs {
        if runs == 0 {
            return Err(CliError::config("--runs", "must be at least 1"));
        }
        spec.run.runs = runs;
    }
    let out = overrides.out.clone().or_else(|| spec.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    match mode {
        Mode::Analyze => analyze(&spec, &out),
        Mode::Simulate => simulate(&spec, &out),
        Mode::VerifyBudget => verify_budget(&spec, &out),
        Mode::ReproducePaper => reproduce_paper(&spec, &out),
    }
}

pub(crate) fn check_cap(horizon: usize, runs: usize, cap: u64) -> Result<(), CliError> {
    let requested = horizon as u128 * runs as u128;
    if requested > u128::from(cap) {
        return Err(CliError::ComputeCap { requested, cap });
    }
    Ok(())
}

/// Certificate (with constants where the condition has a moment bound).
fn certificate(
    condition: Condition,
    plant: &PlantModel,
    ctx: &NormContext,
    channel: &ChannelSpec,
    kappa: f64,
    level: f64,
) -> crate::Result<StabilityCertificate> {
    let env = channel.envelope()?;
    match condition {
        Condition::FirstMoment => bound_constants_prop1(plant, ctx, &env, kappa, level),
        Condition::BoundedDisturbance => bound_constants_thm1(plant, ctx, &env, kappa, level),
        Condition::SecondMoment => bound_constants_thm2(plant, ctx, &env, kappa, level),
        Condition::AlmostSure => check_condition(condition, plant, ctx, &env, level),
    }
}

/// Thresholds and certificates as text plus `condition,max_level,status` rows.
pub(crate) fn analysis_report(
    name: &str,
    plant: &PlantModel,
    p: &nalgebra::DMatrix<f64>,
    channel: &ChannelSpec,
    conditions: &[Condition],
    at: Option<(f64, f64)>,
) -> Result<(String, Vec<Vec<String>>), CliError> {
    let ctx = NormContext::new(p.clone()).map_err(|e| CliError::config("plant.p", e.to_string()))?;
    let env = channel.envelope().map_err(|e| CliError::config("channel.envelope", e.to_string()))?;
    let norms = LoopNorms::new(plant, &ctx).map_err(|e| CliError::config("plant", e.to_string()))?;
    let ch = &channel.params;
    let mut r = String::new();
    let _ = writeln!(r, "experiment: {name}");
    let _ = writeln!(r, "||A||_P = {:.6}  ||A+BK||_P = {:.6}", norms.open, norms.closed);
    let _ = writeln!(r, "norm equivalence: c1 = {:.6}  c2 = {:.6}", ctx.c1, ctx.c2);
    let _ = writeln!(
        r,
        "channel: c = {}  xi = {}  sigma = {}  p(0) = {:.6}  phat(0) = {:.6}",
        ch.c,
        ch.xi,
        ch.sigma,
        failure_probability_unchecked(0.0, ch),
        env.eval(0.0)
    );
    if let Some(psi) = env.psi() {
        let _ = writeln!(r, "envelope shift psi = {psi:.6}");
    }
    let _ = writeln!(r, "\nlargest admissible average interference power:");
    let mut rows = Vec::new();
    for &c in conditions {
        let level = max_admissible_v(c, plant, &ctx, &env).map_err(|e| CliError::config("plant", e.to_string()))?;
        let status = match level.status {
            LevelStatus::Bounded => "bounded",
            LevelStatus::Unbounded => "unbounded",
            LevelStatus::NeverStable => "never-stable",
        };
        let _ = writeln!(r, "  {:<20} {:>10.5}  ({status})", c.name(), level.level);
        rows.push(vec![c.name().to_string(), output::fmt_f64(level.level), status.to_string()]);
    }
    if let Some((kappa, level)) = at {
        let _ = writeln!(r, "\ncertificates at level {level}, budget offset {kappa}:");
        for &c in conditions {
            match certificate(c, plant, &ctx, channel, kappa, level) {
                Ok(cert) => {
                    let verdict = if cert.holds { "holds" } else { "fails" };
                    let _ = writeln!(r, "  {:<20} {verdict} (lhs {:.6})", c.name(), cert.lhs);
                    if let Some(k) = cert.constants {
                        let _ = write!(
                            r,
                            "    theta = {:.10}  ln mu = {:.6}  T* = {}",
                            k.theta, k.ln_mu, k.t_star
                        );
                        if let Some(g) = k.ln_gain {
                            let _ = write!(r, "  ln gain = {g:.6}");
                        }
                        if let Some(t2) = k.t_star_squared {
                            let _ = write!(r, "  T*(squared) = {t2}");
                        }
                        let _ = writeln!(r);
                    }
                }
                Err(e) => {
                    let _ = writeln!(r, "  {:<20} {e}", c.name());
                }
            }
        }
    }
    Ok((r, rows))
}

fn analyze(spec: &ExperimentSpec, out: &Path) -> Result<Outcome, CliError> {
    let plant = spec.require_plant()?;
    let p = spec.require_p()?;
    let channel = spec.require_channel()?;
    let at = spec.analysis.level.map(|v| (spec.analysis.kappa, v));
    let (report, rows) = analysis_report(&spec.name, &plant.model, p, channel, &spec.analysis.conditions, at)?;
    let report_path = out.join("report.txt");
    let csv_path = out.join("thresholds.csv");
    output::write_text(&report_path, &report)?;
    output::write_rows(&csv_path, &["condition", "max_level", "status"], &rows)?;
    Ok(Outcome { files: vec![report_path, csv_path], report })
}

fn sim_config(spec: &ExperimentSpec) -> Result<SimConfig, CliError> {
    let plant = spec.require_plant()?;
    let channel = spec.require_channel()?;
    let strategy = spec
        .require_attack()?
        .strategy(&channel.params)
        .map_err(|e| CliError::config("attack", e.to_string()))?;
    let run = &spec.run;
    let mut cfg = SimConfig::new(
        plant.model.clone(),
        channel.params,
        strategy,
        spec.disturbance.clone(),
        run.horizon,
        run.runs,
        run.seed,
    )
    .map_err(|e| CliError::config("run", e.to_string()))?;
    if let Some(cm) = spec.countermeasure_params()? {
        cfg = cfg.with_countermeasure(cm).map_err(|e| CliError::config("countermeasure", e.to_string()))?;
    }
    Ok(cfg)
}

fn simulate(spec: &ExperimentSpec, out: &Path) -> Result<Outcome, CliError> {
    let cfg = sim_config(spec)?;
    let run = &spec.run;
    check_cap(run.horizon, run.runs, run.compute_cap)?;
    let mut report = String::new();
    let _ = writeln!(report, "experiment: {}", spec.name);
    let _ = writeln!(report, "runs: {}  horizon: {}  seed: {}", run.runs, run.horizon, run.seed);

    let (series, bound) = match run.bound {
        None => (monte_carlo_first_moment(&cfg).map_err(|e| CliError::from_model("run", e))?, None),
        Some(choice) => {
            let condition = match choice {
                BoundChoice::Decay => Condition::FirstMoment,
                BoundChoice::Bounded => Condition::BoundedDisturbance,
                BoundChoice::SecondMoment => Condition::SecondMoment,
            };
            let level = spec
                .analysis
                .level
                .ok_or_else(|| CliError::config("analysis.level", "required when run.bound is set"))?;
            let ctx = NormContext::new(spec.require_p()?.clone())
                .map_err(|e| CliError::config("plant.p", e.to_string()))?;
            let cert = certificate(condition, &cfg.plant, &ctx, spec.require_channel()?, spec.analysis.kappa, level)
                .map_err(|e| CliError::from_model("analysis.level", e))?;
            let dist = DisturbanceLevel::for_model(condition, &cfg.disturbance, &cfg.plant).ok_or_else(|| {
                CliError::config("disturbance", format!("the {condition} bound does not cover this disturbance"))
            })?;
            let check = moment_bound_check(&cfg, &cert, dist).map_err(|e| CliError::from_model("run.bound", e))?;
            let _ = writeln!(
                report,
                "bound ({condition}): {}",
                if check.passed { "respected at every step" } else { "EXCEEDED" }
            );
            if let Some(w) = check.worst {
                let _ = writeln!(report, "  tightest step t = {}: mean {:.6}, bound {:.6e}", w.t, w.mean_norm, w.bound);
            }
            let series = crate::sim::MomentSeries {
                t: check.steps.iter().map(|s| s.t).collect(),
                mean_norm: check.steps.iter().map(|s| s.mean_norm).collect(),
                std_err: check.steps.iter().map(|s| s.std_err).collect(),
                n_runs: run.runs,
            };
            (series, Some(check.steps.iter().map(|s| s.bound).collect::<Vec<_>>()))
        }
    };
    if let Some((i, peak)) = series.peak() {
        let _ = writeln!(report, "peak mean norm {peak:.6} at t = {i}");
    }
    let _ = writeln!(report, "cumulative mean norm {:.6}", series.cumulative());

    let mut files = Vec::new();
    let moments = out.join("moments.csv");
    output::write_moments(&moments, &series, bound.as_deref())?;
    files.push(moments);
    let seeds = out.join("seeds.csv");
    output::write_seed_manifest(&seeds, run.seed, run.runs)?;
    files.push(seeds);
    for i in 0..run.trajectories.min(run.runs) {
        let traj = simulate_trajectory(&cfg, i as u64).map_err(|e| CliError::from_model("run", e))?;
        let path = out.join(format!("trajectory_{i}.csv"));
        output::write_trajectory(&path, &traj.steps, cfg.plant.state_dim())?;
        files.push(path);
    }
    if let Some((z, tau)) = run.exceedance {
        let e = estimate_exceedance_probability(&cfg, z, tau)
            .map_err(|e| CliError::from_model("run.exceedance.tau", e))?;
        let text = format!(
            "tau,threshold,successes,runs,probability,lower_95,upper_95\n{},{},{},{},{},{},{}\n",
            e.tau,
            output::fmt_f64(e.threshold),
            e.successes,
            e.n_runs,
            output::fmt_f64(e.probability),
            output::fmt_f64(e.lower),
            output::fmt_f64(e.upper)
        );
        let path = out.join("exceedance.csv");
        output::write_text(&path, &text)?;
        files.push(path);
        let _ = writeln!(
            report,
            "P[x({tau}) > {z}] = {:.6} (95% interval [{:.6}, {:.6}])",
            e.probability, e.lower, e.upper
        );
    }
    let report_path = out.join("report.txt");
    output::write_text(&report_path, &report)?;
    files.push(report_path);
    Ok(Outcome { files, report })
}

fn verify_budget(spec: &ExperimentSpec, out: &Path) -> Result<Outcome, CliError> {
    let attack = spec.require_attack()?;
    let strategy = match &spec.channel {
        Some(ch) => attack.strategy(&ch.params),
        None if matches!(attack.spec, config::AttackSpec::SleepJam(_)) => {
            return Err(CliError::config("channel", "section is required to build a sleep-jam schedule"))
        }
        None => attack.strategy(&crate::model::ChannelParams::new(1.0, 1.0, 1.0).expect("unit channel")),
    }
    .map_err(|e| CliError::config("attack", e.to_string()))?;
    if strategy.budgets().is_empty() {
        return Err(CliError::config("attack", "no budget declared; add attack.cumulative or attack.windowed"));
    }
    let horizon = spec.run.horizon;
    let trace = strategy.trace(horizon);
    let mut report = String::new();
    let _ = writeln!(report, "experiment: {}\nhorizon: {horizon}", spec.name);
    let mut failures = Vec::new();
    for b in strategy.budgets() {
        let (label, verdict) = match b.kind {
            BudgetKind::Cumulative => ("cumulative", verify_cumulative_budget(&trace, b.kappa, b.rate)),
            BudgetKind::Windowed => ("windowed", verify_windowed_budget(&trace, b.kappa, b.rate)),
        };
        let verdict = verdict.map_err(|e| CliError::config("attack", e.to_string()))?;
        match verdict {
            BudgetVerdict::Satisfied => {
                let _ = writeln!(report, "{label} (kappa {}, rate {}): pass", b.kappa, b.rate);
            }
            BudgetVerdict::Violated { start, end, excess } => {
                let _ = writeln!(
                    report,
                    "{label} (kappa {}, rate {}): FAIL on window [{start}, {end}) by {excess:.6}",
                    b.kappa, b.rate
                );
                failures.push(format!("{label} budget on window [{start}, {end})"));
            }
        }
    }
    let path = out.join("budget.txt");
    output::write_text(&path, &report)?;
    if !failures.is_empty() {
        return Err(CliError::Budget(failures.join("; ")));
    }
    Ok(Outcome { files: vec![path], report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_round_trip_names() {
        for m in [Mode::Analyze, Mode::Simulate, Mode::VerifyBudget, Mode::ReproducePaper] {
            assert_eq!(Mode::parse(m.name()), Some(m));
        }
        assert_eq!(Mode::parse("plot"), None);
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            CliError::config("x", "y").exit_code(),
            CliError::Budget(String::new()).exit_code(),
            CliError::ComputeCap { requested: 2, cap: 1 }.exit_code(),
            CliError::io(Path::new("p"), "e").exit_code(),
        ];
        assert_eq!(codes, [2, 3, 4, 5]);
    }

    #[test]
    fn cap_is_inclusive() {
        assert!(check_cap(1000, 100, 100_000).is_ok());
        assert!(matches!(check_cap(1000, 101, 100_000), Err(CliError::ComputeCap { requested: 101_000, .. })));
    }
}
