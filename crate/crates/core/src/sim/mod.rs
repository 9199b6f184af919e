//! Seeded closed-loop simulation.
//!
//! Run `r` of a configuration draws every random quantity from counter-based
//! streams keyed by `(base_seed, r, t)`; runs are independent and may execute
//! on any number of worker threads without changing results.

mod estimators;
pub mod rng;
pub mod stats;

pub use estimators::{
    cumulative_totals, estimate_exceedance_probability, monte_carlo_first_moment, moment_bound_check,
    summarize_totals, window_product_moments, BoundReport, BoundStep, CumulativeSummary, DisturbanceLevel,
    ExceedanceEstimate, MomentSeries, RunTotals, WindowProducts,
};

use crate::channel::failure_probability_unchecked;
use crate::error::{invalid, Result};
use crate::model::{AttackStrategy, ChannelParams, DisturbanceModel, PlantModel, Step, Trajectory};

use rng::{RunKey, DISTURBANCE_STREAM, INPUT_DISTURBANCE_STREAM};

/// Adaptive transmission power: after `trigger` consecutive failures the
/// transmitter uses `boost_power` for the next `duration` steps, then returns
/// to `nominal_power` and restarts counting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountermeasureParams {
    pub boost_power: f64,
    pub trigger: u32,
    pub duration: u32,
    pub nominal_power: f64,
}

impl CountermeasureParams {
    pub fn new(boost_power: f64, trigger: u32, duration: u32, nominal_power: f64) -> Result<Self> {
        let p = Self { boost_power, trigger, duration, nominal_power };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trigger == 0 || self.duration == 0 {
            return Err(invalid("countermeasure trigger and duration must be positive"));
        }
        if !(self.nominal_power > 0.0 && self.boost_power > self.nominal_power && self.boost_power.is_finite()) {
            return Err(invalid(format!(
                "boost power {} must exceed nominal power {}",
                self.boost_power, self.nominal_power
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub plant: PlantModel,
    pub channel: ChannelParams,
    pub strategy: AttackStrategy,
    pub disturbance: DisturbanceModel,
    pub countermeasure: Option<CountermeasureParams>,
    /// Number of recorded steps `t = 0..horizon`.
    pub horizon: usize,
    pub n_runs: usize,
    pub base_seed: u64,
    /// Test hook: `Some(true)` loses every packet, `Some(false)` delivers every
    /// packet; the failure stream is still consumed.
    pub forced_link: Option<bool>,
}

impl SimConfig {
    pub fn new(
        plant: PlantModel,
        channel: ChannelParams,
        strategy: AttackStrategy,
        disturbance: DisturbanceModel,
        horizon: usize,
        n_runs: usize,
        base_seed: u64,
    ) -> Result<Self> {
        let cfg = Self {
            plant,
            channel,
            strategy,
            disturbance,
            countermeasure: None,
            horizon,
            n_runs,
            base_seed,
            forced_link: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_countermeasure(mut self, cm: CountermeasureParams) -> Result<Self> {
        self.countermeasure = Some(cm);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.n_runs == 0 {
            return Err(invalid("horizon and n_runs must be at least 1"));
        }
        self.disturbance.validate(&self.plant)?;
        if let Some(cm) = &self.countermeasure {
            cm.validate()?;
            if cm.nominal_power != self.channel.xi {
                return Err(invalid(format!(
                    "countermeasure nominal power {} differs from channel xi {}",
                    cm.nominal_power, self.channel.xi
                )));
            }
        }
        Ok(())
    }
}

/// Borrowed view of one recorded step.
#[derive(Debug)]
pub(crate) struct StepView<'a> {
    pub t: u64,
    pub x: &'a [f64],
    pub v: f64,
    pub failed: bool,
    pub xi: f64,
    pub w: &'a [f64],
}

/// Row-major copy of the plant for the inner loop.
pub(crate) struct Kernel<'a> {
    cfg: &'a SimConfig,
    n: usize,
    m: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    k: Vec<f64>,
    boosted: Option<ChannelParams>,
}

impl<'a> Kernel<'a> {
    pub fn new(cfg: &'a SimConfig) -> Result<Self> {
        cfg.validate()?;
        let plant = &cfg.plant;
        let row_major = |m: &nalgebra::DMatrix<f64>| -> Vec<f64> {
            (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect()
        };
        let boosted = match &cfg.countermeasure {
            Some(cm) => Some(cfg.channel.with_xi(cm.boost_power)?),
            None => None,
        };
        Ok(Self {
            cfg,
            n: plant.state_dim(),
            m: plant.input_dim(),
            a: row_major(plant.a()),
            b: row_major(plant.b()),
            k: row_major(plant.k()),
            boosted,
        })
    }

    /// Runs the first `steps` recorded steps of run `run`, calling `observe`
    /// on each.
    pub fn run(&self, run: u64, steps: usize, mut observe: impl FnMut(&StepView<'_>)) {
        let cfg = self.cfg;
        let (n, m) = (self.n, self.m);
        let key = RunKey::new(cfg.base_seed, run);
        let mut x: Vec<f64> = cfg.plant.x0().iter().copied().collect();
        let mut next = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut wc = vec![0.0; m];
        let mut u = vec![0.0; m];

        let mut streak: u32 = 0;
        let mut boost_left: u32 = 0;
        let mut cache: Option<(f64, bool, f64)> = None;

        for t in 0..steps as u64 {
            let v = cfg.strategy.power_at(t);
            let boosted = boost_left > 0;
            let (params, xi) = match (&self.boosted, boosted) {
                (Some(b), true) => (b, b.xi),
                _ => (&cfg.channel, cfg.channel.xi),
            };
            let p = match cache {
                Some((cv, cb, cp)) if cv == v && cb == boosted => cp,
                _ => {
                    let cp = failure_probability_unchecked(v, params);
                    cache = Some((v, boosted, cp));
                    cp
                }
            };
            let r = key.failure_draw(t);
            let failed = cfg.forced_link.unwrap_or(r <= p);

            self.draw_disturbance(&key, t, failed, &mut w, &mut wc);

            observe(&StepView { t, x: &x, v, failed, xi, w: &w });

            if let Some(cm) = &cfg.countermeasure {
                if boosted {
                    boost_left -= 1;
                } else {
                    streak = if failed { streak + 1 } else { 0 };
                    if streak >= cm.trigger {
                        boost_left = cm.duration;
                        streak = 0;
                    }
                }
            }

            if t + 1 < steps as u64 {
                // x <- A x + w + (1 - l) B K x
                for i in 0..n {
                    let row = &self.a[i * n..(i + 1) * n];
                    next[i] = row.iter().zip(&x).map(|(a, x)| a * x).sum::<f64>() + w[i];
                }
                if !failed {
                    for j in 0..m {
                        let row = &self.k[j * n..(j + 1) * n];
                        u[j] = row.iter().zip(&x).map(|(k, x)| k * x).sum();
                    }
                    for i in 0..n {
                        next[i] += self.b[i * m..(i + 1) * m].iter().zip(&u).map(|(b, u)| b * u).sum::<f64>();
                    }
                }
                std::mem::swap(&mut x, &mut next);
            }
        }
    }

    fn draw_disturbance(&self, key: &RunKey, t: u64, failed: bool, w: &mut [f64], wc: &mut [f64]) {
        match &self.cfg.disturbance {
            DisturbanceModel::None => {}
            DisturbanceModel::Constant { value } => w.copy_from_slice(value),
            DisturbanceModel::ControlPath { plant_side, input_side } => {
                plant_side.sample_into(t, &mut key.stream(t, DISTURBANCE_STREAM), w);
                if !failed {
                    input_side.sample_into(t, &mut key.stream(t, INPUT_DISTURBANCE_STREAM), wc);
                    for (i, wi) in w.iter_mut().enumerate() {
                        *wi += self.b[i * self.m..(i + 1) * self.m].iter().zip(wc.iter()).map(|(b, c)| b * c).sum::<f64>();
                    }
                }
            }
            other => other.sample_into(t, &mut key.stream(t, DISTURBANCE_STREAM), w),
        }
    }
}

/// Simulates run `run_index` of `config` and records every step.
pub fn simulate_trajectory(config: &SimConfig, run_index: u64) -> Result<Trajectory> {
    let kernel = Kernel::new(config)?;
    let mut steps = Vec::with_capacity(config.horizon);
    kernel.run(run_index, config.horizon, |s| {
        steps.push(Step { t: s.t, x: s.x.to_vec(), v: s.v, failed: s.failed, xi: s.xi, w: s.w.to_vec() });
    });
    Ok(Trajectory { seed: config.base_seed, run_index, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{constant_strategy, explicit_strategy};
    use crate::presets::{benchmark_channel, benchmark_plant};
    use nalgebra::DVector;

    fn config(disturbance: DisturbanceModel) -> SimConfig {
        SimConfig::new(
            benchmark_plant(),
            benchmark_channel(),
            constant_strategy(1.28).unwrap(),
            disturbance,
            150,
            4,
            42,
        )
        .unwrap()
    }

    #[test]
    fn zero_state_stays_at_zero() {
        let mut cfg = config(DisturbanceModel::None);
        cfg.plant = cfg.plant.with_x0(&[0.0, 0.0]).unwrap();
        let traj = simulate_trajectory(&cfg, 0).unwrap();
        assert!(traj.steps.iter().all(|s| s.x.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn forced_failures_follow_open_loop() {
        let mut cfg = config(DisturbanceModel::None);
        cfg.horizon = 20;
        cfg.forced_link = Some(true);
        let traj = simulate_trajectory(&cfg, 0).unwrap();
        let mut x = DVector::from_column_slice(&[1.0, 1.0]);
        for step in &traj.steps {
            assert!(step.failed);
            let got = DVector::from_column_slice(&step.x);
            assert!((&got - &x).norm() <= 1e-12 * x.norm().max(1.0));
            x = cfg.plant.a() * &x;
        }
    }

    #[test]
    fn replay_reproduces_states() {
        for d in [
            DisturbanceModel::Uniform { half_width: 0.5 },
            DisturbanceModel::Gaussian { std_dev: 0.3 },
            DisturbanceModel::ControlPath {
                plant_side: Box::new(DisturbanceModel::Uniform { half_width: 0.2 }),
                input_side: Box::new(DisturbanceModel::Gaussian { std_dev: 0.1 }),
            },
        ] {
            let traj = simulate_trajectory(&config(d), 3).unwrap();
            assert!(traj.replay_error(&benchmark_plant()) < 1e-12);
        }
    }

    #[test]
    fn control_path_disturbance_vanishes_on_failure() {
        let cfg = config(DisturbanceModel::ControlPath {
            plant_side: Box::new(DisturbanceModel::None),
            input_side: Box::new(DisturbanceModel::Uniform { half_width: 1.0 }),
        });
        let traj = simulate_trajectory(&cfg, 0).unwrap();
        for s in &traj.steps {
            // B = [0, 1]^T, so only the second coordinate is disturbed.
            assert_eq!(s.w[0], 0.0);
            if s.failed {
                assert_eq!(s.w[1], 0.0);
            }
        }
        assert!(traj.steps.iter().any(|s| s.w[1] != 0.0));
    }

    #[test]
    fn deterministic_per_run() {
        let cfg = config(DisturbanceModel::Uniform { half_width: 0.5 });
        assert_eq!(simulate_trajectory(&cfg, 2).unwrap(), simulate_trajectory(&cfg, 2).unwrap());
        assert_ne!(simulate_trajectory(&cfg, 2).unwrap(), simulate_trajectory(&cfg, 1).unwrap());
    }

    #[test]
    fn countermeasure_boosts_after_consecutive_failures() {
        let mut cfg = config(DisturbanceModel::None);
        cfg.strategy = explicit_strategy(10, 60, 32.0, None).unwrap();
        cfg.horizon = 100;
        let cfg = cfg.with_countermeasure(CountermeasureParams::new(12.0, 2, 4, 3.0).unwrap()).unwrap();
        let traj = simulate_trajectory(&cfg, 0).unwrap();
        let mut streak = 0;
        let mut boost_left = 0;
        for s in &traj.steps {
            if boost_left > 0 {
                assert_eq!(s.xi, 12.0, "step {}", s.t);
                boost_left -= 1;
                continue;
            }
            assert_eq!(s.xi, 3.0, "step {}", s.t);
            streak = if s.failed { streak + 1 } else { 0 };
            if streak == 2 {
                boost_left = 4;
                streak = 0;
            }
        }
        assert!(traj.steps.iter().any(|s| s.xi == 12.0));
    }

    #[test]
    fn countermeasure_must_boost() {
        assert!(CountermeasureParams::new(3.0, 2, 4, 3.0).is_err());
        assert!(CountermeasureParams::new(6.0, 0, 4, 3.0).is_err());
        let cfg = config(DisturbanceModel::None);
        assert!(cfg.with_countermeasure(CountermeasureParams::new(6.0, 2, 4, 2.0).unwrap()).is_err());
    }
}
