//! Built-in benchmark presets: admissible-power thresholds, budget
//! arithmetic for the two burst schedules, first-moment series under both
//! bursts, and the countermeasure grid against the long burst.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::{ChannelSpec, EnvelopeSpec, ExperimentSpec};
use super::output::{fmt_f64, write_moments, write_rows, write_seed_manifest, write_text};
use super::{analysis_report, check_cap, CliError, Outcome};
use crate::analysis::Condition;
use crate::channel::{
    max_consecutive_duration, max_power_for_duration, verify_cumulative_budget, verify_windowed_budget, Duration,
};
use crate::presets::{
    benchmark_channel, benchmark_p, benchmark_plant, burst_config, countermeasure_grid, BURST_POWER, BURST_RATE,
    BURST_WINDOW_KAPPA, LONG_BURST, SHORT_BURST,
};
use crate::sim::{cumulative_totals, monte_carlo_first_moment, summarize_totals, CountermeasureParams};

fn model_err(e: crate::Error) -> CliError {
    CliError::config("run", e.to_string())
}

fn budget_section() -> Result<String, CliError> {
    let mut r = String::new();
    let _ = writeln!(r, "budget arithmetic (power {BURST_POWER}, rate {BURST_RATE}):");
    for (sleep, jam) in [SHORT_BURST, LONG_BURST] {
        let trace = burst_config((sleep, jam), false, (sleep + jam) as usize, 1, 0).strategy.trace((sleep + jam) as usize);
        let cumulative = verify_cumulative_budget(&trace, 0.0, BURST_RATE).map_err(model_err)?;
        let windowed = verify_windowed_budget(&trace, BURST_WINDOW_KAPPA, BURST_RATE).map_err(model_err)?;
        let show = |v: crate::channel::BudgetVerdict| match v {
            crate::channel::BudgetVerdict::Satisfied => "pass".to_string(),
            crate::channel::BudgetVerdict::Violated { start, end, .. } => format!("fail on [{start}, {end})"),
        };
        let _ = writeln!(
            r,
            "  sleep {sleep}, jam {jam}: cumulative (0, {BURST_RATE}) {}; windowed ({BURST_WINDOW_KAPPA}, {BURST_RATE}) {}",
            show(cumulative),
            show(windowed)
        );
    }
    let longest = match max_consecutive_duration(BURST_WINDOW_KAPPA, BURST_RATE, BURST_POWER) {
        Duration::Steps(n) => n.to_string(),
        Duration::Unbounded => "unbounded".to_string(),
    };
    let power60 = max_power_for_duration(BURST_WINDOW_KAPPA, BURST_RATE, LONG_BURST.1).map_err(model_err)?;
    let _ = writeln!(r, "  longest admissible run at power {BURST_POWER}: {longest} steps");
    let _ = writeln!(r, "  largest admissible power for {} steps: {power60:.6}", LONG_BURST.1);
    Ok(r)
}

pub fn reproduce_paper(spec: &ExperimentSpec, out: &Path) -> Result<Outcome, CliError> {
    let (horizon, runs, seed) = (spec.run.horizon, spec.run.runs, spec.run.seed);
    let cap = spec.run.compute_cap;
    check_cap(horizon, runs, cap)?;
    let mut files: Vec<PathBuf> = Vec::new();
    let mut summary = String::new();
    let _ = writeln!(summary, "experiment: {}\nruns: {runs}  horizon: {horizon}  seed: {seed}\n", spec.name);

    // Thresholds.
    let channel = ChannelSpec { params: benchmark_channel(), envelope: EnvelopeSpec::Shifted };
    let (thresholds, rows) = analysis_report(
        "benchmark",
        &benchmark_plant(),
        &benchmark_p(),
        &channel,
        &Condition::ALL,
        Some((0.0, BURST_RATE)),
    )?;
    let path = out.join("thresholds.txt");
    write_text(&path, &thresholds)?;
    files.push(path);
    let path = out.join("thresholds.csv");
    write_rows(&path, &["condition", "max_level", "status"], &rows)?;
    files.push(path);
    let _ = writeln!(summary, "largest admissible average interference power:");
    for row in &rows {
        let level: f64 = row[1].parse().unwrap_or(f64::NAN);
        let _ = writeln!(summary, "  {:<20} {level:.5}", row[0]);
    }

    // Budgets.
    let budgets = budget_section()?;
    let path = out.join("budgets.txt");
    write_text(&path, &budgets)?;
    files.push(path);
    let _ = writeln!(summary, "\n{budgets}");

    // First moments under both bursts.
    let _ = writeln!(summary, "first moments (mean state norm):");
    let _ = writeln!(summary, "  {:<28} {:>10} {:>8} {:>10} {:>12}", "series", "peak", "at", "std_err", "final");
    for (burst, label) in [(SHORT_BURST, "burst40"), (LONG_BURST, "burst60")] {
        for disturbed in [true, false] {
            let cfg = burst_config(burst, disturbed, horizon, runs, seed);
            let series = monte_carlo_first_moment(&cfg).map_err(model_err)?;
            let name = if disturbed { label.to_string() } else { format!("{label}_undisturbed") };
            let path = out.join(format!("{name}.csv"));
            write_moments(&path, &series, None)?;
            files.push(path);
            if let Some((i, peak)) = series.peak() {
                let _ = writeln!(
                    summary,
                    "  {name:<28} {peak:>10.4} {i:>8} {:>10.4} {:>12.6}",
                    series.std_err[i],
                    series.mean_norm[series.len() - 1]
                );
            }
        }
    }

    // Countermeasure grid against the long burst with disturbance.
    let baseline_cfg = burst_config(LONG_BURST, true, horizon, runs, seed);
    let baseline = cumulative_totals(&baseline_cfg).map_err(model_err)?;
    let nominal = baseline_cfg.channel.xi;
    let header = [
        "xi_c",
        "n_c",
        "t_c",
        "total_norm",
        "total_power",
        "baseline_total_norm",
        "baseline_total_power",
        "norm_difference",
        "difference_std_err",
        "difference_upper_95",
        "reduced",
    ];
    let mut rows = Vec::new();
    let _ = writeln!(summary, "\ncountermeasure against the long burst (totals over the horizon):");
    let _ = writeln!(summary, "  {:>5} {:>4} {:>4} {:>12} {:>12} {:>8}", "xi_c", "n_c", "t_c", "norm", "power", "reduced");
    let _ = writeln!(summary, "  {:>16} {:>12.3} {:>12.3}", "none", mean(&baseline, |r| r.norm), mean(&baseline, |r| r.power));
    for (xi_c, n_c, t_c) in countermeasure_grid() {
        let cm = CountermeasureParams::new(xi_c, n_c, t_c, nominal).map_err(model_err)?;
        let cfg = baseline_cfg.clone().with_countermeasure(cm).map_err(model_err)?;
        let totals = cumulative_totals(&cfg).map_err(model_err)?;
        let s = summarize_totals(&totals, &baseline).map_err(model_err)?;
        rows.push(vec![
            fmt_f64(xi_c),
            n_c.to_string(),
            t_c.to_string(),
            fmt_f64(s.mean_norm),
            fmt_f64(s.mean_power),
            fmt_f64(s.baseline_norm),
            fmt_f64(s.baseline_power),
            fmt_f64(s.difference.mean),
            fmt_f64(s.difference.std_err),
            fmt_f64(s.upper),
            s.reduced.to_string(),
        ]);
        let _ = writeln!(
            summary,
            "  {xi_c:>5} {n_c:>4} {t_c:>4} {:>12.3} {:>12.3} {:>8}",
            s.mean_norm, s.mean_power, s.reduced
        );
    }
    let path = out.join("countermeasure.csv");
    write_rows(&path, &header, &rows)?;
    files.push(path);

    let path = out.join("seeds.csv");
    write_seed_manifest(&path, seed, runs)?;
    files.push(path);
    let path = out.join("summary.txt");
    write_text(&path, &summary)?;
    files.push(path);
    Ok(Outcome { files, report: summary })
}

fn mean(v: &[crate::sim::RunTotals], f: impl Fn(&crate::sim::RunTotals) -> f64) -> f64 {
    v.iter().map(f).sum::<f64>() / v.len().max(1) as f64
}
