//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each, and exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use jamsim::analysis::{
    bound_constants_prop1, bound_constants_thm1, bound_constants_thm2, lemma_constants, max_admissible_v,
    check_condition, Condition, LevelStatus, LoopNorms, NormContext,
};
use jamsim::attacks::{constant_strategy, explicit_strategy, sleep_jam_strategy, SleepJamParams};
use jamsim::channel::{
    failure_probability, max_consecutive_duration, max_power_for_duration, q_function, validation_grid,
    verify_cumulative_budget, verify_windowed_budget, Duration as Steps, PHatEnvelope,
};
use jamsim::model::{DisturbanceModel, PlantModel};
use jamsim::presets::{
    benchmark_channel, benchmark_p, benchmark_plant, burst_config, countermeasure_grid, BURST_HORIZON, BURST_POWER,
    BURST_RATE, BURST_RUNS, BURST_WINDOW_KAPPA, LONG_BURST, SHORT_BURST,
};
use jamsim::sim::rng::RunKey;
use jamsim::sim::stats::Z95_ONE_SIDED;
use jamsim::sim::{
    cumulative_totals, estimate_exceedance_probability, moment_bound_check, monte_carlo_first_moment,
    summarize_totals, window_product_moments, CountermeasureParams, DisturbanceLevel, SimConfig,
};
use nalgebra::{DMatrix, DVector};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("{what} took {took:?}, limit {limit:?}"))
}

fn setup() -> (PlantModel, NormContext, PHatEnvelope) {
    (
        benchmark_plant(),
        NormContext::new(benchmark_p()).unwrap(),
        PHatEnvelope::shifted(benchmark_channel()).unwrap(),
    )
}

fn thresholds() -> Outcome {
    let start = Instant::now();
    let (plant, ctx, env) = setup();
    ensure(env.psi() == Some(0.6), || format!("envelope shift {:?}", env.psi()))?;
    let mut found = Vec::new();
    for (cond, target, tol) in
        [(Condition::FirstMoment, 1.29, 0.01), (Condition::AlmostSure, 3.5, 0.05), (Condition::SecondMoment, 0.345, 0.005)]
    {
        let level = max_admissible_v(cond, &plant, &ctx, &env).map_err(|e| e.to_string())?;
        ensure(level.status == LevelStatus::Bounded, || format!("{cond}: {:?}", level.status))?;
        ensure((level.level - target).abs() <= tol, || format!("{cond}: {} not within {tol} of {target}", level.level))?;
        found.push(format!("{cond} {:.5}", level.level));
    }
    within_time(start, Duration::from_secs(1), "threshold search")?;
    Ok(format!("{} in {:?}", found.join(", "), start.elapsed()))
}

fn budgets() -> Outcome {
    let top = explicit_strategy(SHORT_BURST.0, SHORT_BURST.1, BURST_POWER, None).unwrap();
    let bottom = explicit_strategy(LONG_BURST.0, LONG_BURST.1, BURST_POWER, None).unwrap();
    for horizon in [1000, 1500, BURST_HORIZON] {
        let v = verify_cumulative_budget(&top.trace(horizon), 0.0, BURST_RATE).unwrap();
        ensure(v.passed(), || format!("short burst fails the cumulative budget at horizon {horizon}: {v:?}"))?;
        let v = verify_cumulative_budget(&bottom.trace(horizon), 0.0, BURST_RATE).unwrap();
        ensure(v.passed(), || format!("long burst fails the cumulative budget at horizon {horizon}: {v:?}"))?;
    }
    let v = verify_windowed_budget(&top.trace(BURST_HORIZON), BURST_WINDOW_KAPPA, BURST_RATE).unwrap();
    ensure(v.passed(), || format!("short burst fails the windowed budget: {v:?}"))?;
    let v = verify_windowed_budget(&bottom.trace(BURST_HORIZON), BURST_WINDOW_KAPPA, BURST_RATE).unwrap();
    ensure(!v.passed(), || "long burst passes the windowed budget".into())?;
    let d = max_consecutive_duration(BURST_WINDOW_KAPPA, BURST_RATE, BURST_POWER);
    ensure(d == Steps::Steps(40), || format!("max consecutive duration {d:?}"))?;
    let p = max_power_for_duration(BURST_WINDOW_KAPPA, BURST_RATE, 60).unwrap();
    ensure((p - 21.76).abs() <= 1e-12, || format!("60-step power {p}"))?;
    Ok(format!("windowed violation {v:?}; 40 steps at 32; 60-step power {p}"))
}

fn example_guarantee() -> Outcome {
    let start = Instant::now();
    // x(t+1) = 1.1 x + (1 - l) (-0.6) x + 0.5 with x0 = 1: A = 1.1 > 1, A + BK = 0.5.
    let plant = PlantModel::from_rows(&[vec![1.1]], &[vec![1.0]], &[vec![-0.6]], &[1.0]).unwrap();
    let params = SleepJamParams { rate: 10.0, rho: 0.8, target: 10.0, disturbance: 0.5, open_loop_gain: 1.1 };
    let channel = benchmark_channel();
    let s = sleep_jam_strategy(&params, &channel).map_err(|e| e.to_string())?;
    let tau = s.strike_time();
    ensure(
        verify_cumulative_budget(&s.strategy.trace(tau as usize), 0.0, params.rate).unwrap().passed(),
        || "generated schedule exceeds its average-power budget".into(),
    )?;
    let cfg = SimConfig::new(
        plant,
        channel,
        s.strategy.clone(),
        DisturbanceModel::Constant { value: vec![params.disturbance] },
        tau as usize + 1,
        10_000,
        2024,
    )
    .unwrap();
    let e = estimate_exceedance_probability(&cfg, params.target, tau).map_err(|e| e.to_string())?;
    ensure(e.lower > params.rho, || format!("lower confidence bound {} <= {}", e.lower, params.rho))?;
    within_time(start, Duration::from_secs(30), "exceedance estimate")?;
    Ok(format!(
        "sleep {} jam {} power {:.1}: P[x({tau}) > {}] = {:.4}, 95% lower bound {:.4} ({:?})",
        s.sleep,
        s.jam,
        s.power,
        params.target,
        e.probability,
        e.lower,
        start.elapsed()
    ))
}

fn burst_shape() -> Outcome {
    let start = Instant::now();
    let mut peaks = Vec::new();
    for (i, burst) in [SHORT_BURST, LONG_BURST].into_iter().enumerate() {
        let cfg = burst_config(burst, true, BURST_HORIZON, BURST_RUNS, 100 + i as u64);
        let m = monte_carlo_first_moment(&cfg).unwrap();
        let (at, peak) = m.peak().unwrap();
        let (sleep, jam) = (burst.0 as usize, burst.1 as usize);
        // The state at `sleep + jam` is the first one produced after the last jammed step.
        ensure((sleep..=sleep + jam).contains(&at), || format!("burst {burst:?}: peak at {at}"))?;
        let before = m.mean_norm[sleep];
        let after = m.mean_norm[sleep + jam + 50];
        let end = m.mean_norm[m.len() - 1];
        ensure(after < 0.25 * peak, || format!("burst {burst:?}: mean {after} 50 steps after is not below a quarter of the peak {peak}"))?;
        ensure(end <= before + 3.0 * (m.std_err[m.len() - 1] + m.std_err[sleep]), || {
            format!("burst {burst:?}: final mean {end} above pre-attack level {before}")
        })?;
        peaks.push((at, peak, m.std_err[at]));
    }
    let (short, long) = (peaks[0], peaks[1]);
    let z = (long.1 - short.1) / (long.2 * long.2 + short.2 * short.2).sqrt();
    ensure(z > Z95_ONE_SIDED, || format!("peak difference z = {z:.3}"))?;
    within_time(start, Duration::from_secs(120), "burst ensembles")?;
    Ok(format!(
        "peaks {:.2} at {} and {:.2} at {}; difference z = {z:.2} ({:?})",
        short.1,
        short.0,
        long.1,
        long.0,
        start.elapsed()
    ))
}

fn bound_suite() -> Outcome {
    let start = Instant::now();
    let (plant, ctx, env) = setup();
    let ch = benchmark_channel();
    let runs = 10_000;
    let mut lines = Vec::new();
    let mut check = |label: &str, cfg: SimConfig, cert, level| -> Result<(), String> {
        let report = moment_bound_check(&cfg, &cert, level).map_err(|e| format!("{label}: {e}"))?;
        let worst = report.worst.unwrap();
        ensure(report.passed, || format!("{label}: exceeded at t = {} ({worst:?})", worst.t))?;
        lines.push(format!("{label} min margin {:.3e}", worst.margin));
        Ok(())
    };
    let cfg = |strategy, disturbance, horizon, seed| SimConfig::new(plant.clone(), ch, strategy, disturbance, horizon, runs, seed).unwrap();

    // (i) No disturbance, constant attack at the first-moment level.
    let cert = bound_constants_prop1(&plant, &ctx, &env, 0.0, BURST_RATE).unwrap();
    check("decay", cfg(constant_strategy(BURST_RATE).unwrap(), DisturbanceModel::None, 200, 1), cert, DisturbanceLevel::None)?;

    // (ii) Uniform disturbance with the short burst; the horizon covers the burst.
    let uniform = DisturbanceModel::Uniform { half_width: 0.5 };
    let w_bar = 0.5 * 2f64.sqrt();
    let cert = bound_constants_thm1(&plant, &ctx, &env, BURST_WINDOW_KAPPA, BURST_RATE).unwrap();
    let burst = explicit_strategy(SHORT_BURST.0, SHORT_BURST.1, BURST_POWER, None).unwrap();
    check("bounded/short-burst", cfg(burst, uniform.clone(), 1100, 2), cert, DisturbanceLevel::Bounded(w_bar))?;
    // Same disturbance with a constant attack and zero offset, where the bound is finite.
    let cert = bound_constants_thm1(&plant, &ctx, &env, 0.0, BURST_RATE).unwrap();
    check("bounded/constant", cfg(constant_strategy(BURST_RATE).unwrap(), uniform, 200, 3), cert, DisturbanceLevel::Bounded(w_bar))?;

    // (iii) Gaussian disturbance under the second-moment level.
    let cert = bound_constants_thm2(&plant, &ctx, &env, 0.0, 0.34).unwrap();
    let gaussian = DisturbanceModel::Gaussian { std_dev: 0.3 };
    check("second-moment/gaussian", cfg(constant_strategy(0.34).unwrap(), gaussian, 200, 4), cert.clone(), DisturbanceLevel::SecondMoment(2.0 * 0.09))?;
    // Disturbance partly injected through the control input, so it depends on the failures.
    let coupled = DisturbanceModel::ControlPath {
        plant_side: Box::new(DisturbanceModel::Gaussian { std_dev: 0.2 }),
        input_side: Box::new(DisturbanceModel::Gaussian { std_dev: 0.5 }),
    };
    let level = DisturbanceLevel::for_model(Condition::SecondMoment, &coupled, &plant).unwrap();
    check("second-moment/control-path", cfg(constant_strategy(0.34).unwrap(), coupled, 200, 5), cert, level)?;

    within_time(start, Duration::from_secs(300), "bound suite")?;
    Ok(format!("{} ({:?})", lines.join("; "), start.elapsed()))
}

fn lemma_suite() -> Outcome {
    let start = Instant::now();
    let (plant, ctx, env) = setup();
    let norms = LoopNorms::new(&plant, &ctx).unwrap();
    let (g1, g0) = (norms.zeta1(), norms.zeta0());
    let (a1, a0) = (g1 * g1 + 2.0 * g1 * g0, g0 * g0);
    let runs = 100_000;
    let max_len = 50;
    let end = 60;
    let mut notes = Vec::new();
    let config = |power: f64, seed| {
        SimConfig::new(plant.clone(), benchmark_channel(), constant_strategy(power).unwrap(), DisturbanceModel::None, end as usize, runs, seed)
            .unwrap()
    };

    // Products and their partial sums: constant power at the first-moment level,
    // with and without a budget offset.
    for (power, kappa, seed) in [(BURST_RATE, 0.0, 31), (1.0, 5.0, 32)] {
        let lemma = lemma_constants(g1, g0, &env, kappa, power).map_err(|e| e.to_string())?;
        let w = window_product_moments(&config(power, seed), g1, g0, end, max_len).map_err(|e| e.to_string())?;
        for (k, e) in w.product.iter().enumerate() {
            let bound = lemma.window_bound(k as u64 + 1);
            ensure(e.mean - 3.0 * e.std_err <= bound, || format!("power {power}: window {} mean {} > {bound}", k + 1, e.mean))?;
        }
        let d = lemma.ln_sum_bound().exp();
        for (k, s) in w.partial_sum.iter().enumerate() {
            ensure(s.mean - 3.0 * s.std_err <= d, || format!("power {power}: partial sum {} = {} > d = {d}", k + 1, s.mean))?;
        }
        notes.push(format!("power {power} kappa {kappa}: T* {} d {d:.1}", lemma.t_star));
    }

    // Squared products at the second-moment level.
    let power = 0.34;
    let lemma = lemma_constants(a1, a0, &env, 0.0, power).map_err(|e| e.to_string())?;
    let w = window_product_moments(&config(power, 33), g1, g0, end, max_len).map_err(|e| e.to_string())?;
    for (k, e) in w.product_sq.iter().enumerate() {
        let bound = lemma.window_bound(k as u64 + 1);
        ensure(e.mean - 3.0 * e.std_err <= bound, || format!("squared window {} mean {} > {bound}", k + 1, e.mean))?;
    }
    let f = lemma.ln_root_sum_bound().exp();
    for len in 1..=max_len {
        let s = w.root_partial_sum(len);
        ensure(s.mean - 3.0 * s.std_err <= f, || format!("root partial sum {len} = {} > f = {f}", s.mean))?;
    }
    notes.push(format!("squared at power {power}: f {f:.2}"));
    Ok(format!("{} ({:?})", notes.join("; "), start.elapsed()))
}

/// Tail integral of the standard normal density by composite Simpson.
fn normal_tail(y: f64) -> f64 {
    let (a, b, n) = (y, y + 40.0, 400_000);
    let h = (b - a) / n as f64;
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut sum = pdf(a) + pdf(b);
    for i in 1..n {
        sum += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

fn analytic_suite() -> Outcome {
    let (plant, ctx, env) = setup();
    let ch = benchmark_channel();

    // Envelope on the grid.
    let grid = validation_grid();
    let vals: Vec<f64> = grid.iter().map(|&v| env.eval(v)).collect();
    for (&v, &ph) in grid.iter().zip(&vals) {
        ensure(ph >= failure_probability(v, &ch).unwrap(), || format!("envelope below p at {v}"))?;
    }
    for (i, g) in grid.windows(2).enumerate() {
        let mid = env.eval(0.5 * (g[0] + g[1]));
        ensure(mid >= 0.5 * (vals[i] + vals[i + 1]) - 1e-12, || format!("midpoint concavity fails on {g:?}"))?;
    }

    // Induced norm on 100 random pairs.
    let key = RunKey::new(7, 0);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let mut rng = key.stream(i, 0);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.uniform() * 6.0 - 3.0).collect() };
        let m = DMatrix::from_row_slice(2, 2, &draw(4));
        let n = DMatrix::from_row_slice(2, 2, &draw(4));
        let x = DVector::from_vec(draw(2));
        let (nm, nn) = (ctx.induced_norm(&m).unwrap(), ctx.induced_norm(&n).unwrap());
        let nmn = ctx.induced_norm(&(&m * &n)).unwrap();
        ensure(nmn <= nm * nn + 1e-9, || format!("pair {i}: {nmn} > {nm} * {nn}"))?;
        let (lhs, rhs) = (ctx.vector_norm(&(&m * &x)), nm * ctx.vector_norm(&x));
        ensure(lhs <= rhs + 1e-9, || format!("pair {i}: compatibility {lhs} > {rhs}"))?;
        worst = worst.max(nmn - nm * nn);
    }

    // Norm equivalence is attained on the eigenvectors of P.
    let vecs = ctx.eigenvectors();
    for j in 0..2 {
        let v = vecs.column(j).into_owned();
        let ratio = v.norm() / ctx.vector_norm(&v);
        let expected = if j == 0 { ctx.c2 } else { ctx.c1 };
        ensure((ratio - expected).abs() < 1e-12, || format!("eigenvector {j}: ratio {ratio} vs {expected}"))?;
    }

    // Condition ordering.
    let level = |c| max_admissible_v(c, &plant, &ctx, &env).unwrap().level;
    let (sm, fm, al) = (level(Condition::SecondMoment), level(Condition::FirstMoment), level(Condition::AlmostSure));
    ensure(sm < fm && fm < al, || format!("thresholds not ordered: {sm} {fm} {al}"))?;
    for i in 0..200 {
        let v = i as f64 * 0.025;
        let holds = |c| check_condition(c, &plant, &ctx, &env, v).unwrap().holds;
        ensure(!holds(Condition::SecondMoment) || holds(Condition::FirstMoment), || format!("v = {v}"))?;
        ensure(!holds(Condition::FirstMoment) || holds(Condition::AlmostSure), || format!("v = {v}"))?;
    }

    // Q function against quadrature.
    let mut max_err: f64 = 0.0;
    for y in [0.0, 0.5, 1.0, 2.0, 7.5f64.sqrt(), 4.0, 6.0] {
        let err = (q_function(y).unwrap() - normal_tail(y)).abs();
        ensure(err < 1e-10, || format!("Q({y}) off by {err}"))?;
        max_err = max_err.max(err);
    }
    Ok(format!("max Q error {max_err:.1e}; largest submultiplicativity slack {worst:.1e}"))
}

fn countermeasure_study() -> Outcome {
    let start = Instant::now();
    let baseline_cfg = burst_config(LONG_BURST, true, BURST_HORIZON, BURST_RUNS, 300);
    let baseline = cumulative_totals(&baseline_cfg).unwrap();
    let mut power = std::collections::HashMap::new();
    let mut worst_upper = f64::NEG_INFINITY;
    for (xi_c, n_c, t_c) in countermeasure_grid() {
        let cm = CountermeasureParams::new(xi_c, n_c, t_c, baseline_cfg.channel.xi).unwrap();
        let cfg = baseline_cfg.clone().with_countermeasure(cm).unwrap();
        let s = summarize_totals(&cumulative_totals(&cfg).unwrap(), &baseline).unwrap();
        ensure(s.reduced, || format!("({xi_c}, {n_c}, {t_c}): no significant reduction, upper bound {}", s.upper))?;
        worst_upper = worst_upper.max(s.upper);
        power.insert((xi_c.to_bits(), n_c, t_c), s.mean_power);
    }
    for (_, n_c, t_c) in countermeasure_grid().into_iter().filter(|g| g.0 == 6.0) {
        let (low, high) = (power[&(6f64.to_bits(), n_c, t_c)], power[&(12f64.to_bits(), n_c, t_c)]);
        ensure(high >= low, || format!("(N, T) = ({n_c}, {t_c}): power {high} at 12 below {low} at 6"))?;
    }
    Ok(format!("largest upper bound on the norm change {worst_upper:.1} ({:?})", start.elapsed()))
}

fn reproduce_twice() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_jamsim");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "name = \"benchmark\"\n").unwrap();
    let run = |out: &Path, workers: &str| {
        Command::new(bin)
            .args(["reproduce-paper", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "17"])
            .env("JAMSIM_WORKERS", workers)
            .output()
            .map_err(|e| e.to_string())
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, workers) in [(&a, "1"), (&b, "4")] {
        let o = run(out, workers)?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    ensure(names.len() >= 8, || format!("only {} files written", names.len()))?;
    for name in &names {
        let (x, y) = (std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).map_err(|e| e.to_string())?);
        ensure(x == y, || format!("{} differs", name.to_string_lossy()))?;
    }
    Ok(format!("{} files byte-identical", names.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("threshold reproduction", thresholds),
        ("budget arithmetic", budgets),
        ("sleep-jam exceedance guarantee", example_guarantee),
        ("burst first-moment shape", burst_shape),
        ("moment bounds hold empirically", bound_suite),
        ("window-product lemmas hold empirically", lemma_suite),
        ("analytic properties", analytic_suite),
        ("countermeasure study", countermeasure_study),
        ("determinism of the preset run", reproduce_twice),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let label = format!("{} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|s| label.contains(s.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("criterion {label}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {label}: FAIL ({detail})");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
