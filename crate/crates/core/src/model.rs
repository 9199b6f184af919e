//! Domain types shared by the channel, analysis and simulation layers.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::error::{invalid, Error, Result};

/// Linear plant `x(t+1) = A x(t) + (1 - l(t)) B u(t) + w(t)` closed with the
/// static feedback `u(t) = K x(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    k: DMatrix<f64>,
    x0: DVector<f64>,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, k: DMatrix<f64>, x0: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(Error::Dimension("state dimension must be at least 1".into()));
        }
        if a.ncols() != n {
            return Err(Error::Dimension(format!("A must be square, got {}x{}", n, a.ncols())));
        }
        let m = b.ncols();
        if m == 0 {
            return Err(Error::Dimension("input dimension must be at least 1".into()));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B must be {n}x{m}, got {}x{}", b.nrows(), m)));
        }
        if k.nrows() != m || k.ncols() != n {
            return Err(Error::Dimension(format!(
                "K must be {m}x{n}, got {}x{}",
                k.nrows(),
                k.ncols()
            )));
        }
        if x0.len() != n {
            return Err(Error::Dimension(format!("x0 must have length {n}, got {}", x0.len())));
        }
        let finite = a.iter().chain(b.iter()).chain(k.iter()).chain(x0.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(invalid("plant matrices must be finite"));
        }
        Ok(Self { a, b, k, x0 })
    }

    /// Builds a plant from row-major nested slices.
    pub fn from_rows(a: &[Vec<f64>], b: &[Vec<f64>], k: &[Vec<f64>], x0: &[f64]) -> Result<Self> {
        Self::new(matrix_from_rows(a)?, matrix_from_rows(b)?, matrix_from_rows(k)?, DVector::from_column_slice(x0))
    }

    pub fn with_x0(&self, x0: &[f64]) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), self.k.clone(), DVector::from_column_slice(x0))
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    /// `A + BK`, the dynamics under a delivered control packet.
    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.a + &self.b * &self.k
    }

    /// One step of the closed-loop recursion.
    pub fn step(&self, x: &DVector<f64>, failed: bool, w: &DVector<f64>) -> DVector<f64> {
        let mut next = &self.a * x + w;
        if !failed {
            next += &self.b * (&self.k * x);
        }
        next
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::Dimension("matrix must be non-empty".into()));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("matrix rows have unequal lengths".into()));
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

/// Parameters of the SINR failure model `p(v) = 2 Q(sqrt(c xi / (v + sigma)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    /// Protocol constant.
    pub c: f64,
    /// Transmission power.
    pub xi: f64,
    /// Channel noise power.
    pub sigma: f64,
}

impl ChannelParams {
    pub fn new(c: f64, xi: f64, sigma: f64) -> Result<Self> {
        for (name, value) in [("c", c), ("xi", xi), ("sigma", sigma)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(format!("channel parameter {name} must be positive and finite, got {value}")));
            }
        }
        Ok(Self { c, xi, sigma })
    }

    /// Same channel with a different transmission power.
    pub fn with_xi(&self, xi: f64) -> Result<Self> {
        Self::new(self.c, xi, self.sigma)
    }
}

/// Which attack-budget inequality a schedule declares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetKind {
    /// Cumulative power from time zero: `sum_{i<t} v(i) <= kappa + rate * t`.
    Cumulative,
    /// Every window: `sum_{t1<=i<t2} v(i) <= kappa + rate * (t2 - t1)`.
    Windowed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub kind: BudgetKind,
    pub kappa: f64,
    pub rate: f64,
}

/// Deterministic interference-power schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// `power` on `[start, start + len)`, zero elsewhere; with a period the
    /// pattern repeats on `t mod period`.
    Burst {
        start: u64,
        len: u64,
        power: f64,
        period: Option<u64>,
    },
    /// Explicit per-step powers, zero past the end.
    Table(Arc<[f64]>),
}

impl Schedule {
    pub fn power_at(&self, t: u64) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::Burst { start, len, power, period } => {
                let phase = period.map_or(t, |p| t % p);
                if phase >= *start && phase - start < *len {
                    *power
                } else {
                    0.0
                }
            }
            Schedule::Table(values) => usize::try_from(t).ok().and_then(|i| values.get(i)).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackStrategy {
    schedule: Schedule,
    budgets: Vec<Budget>,
}

impl AttackStrategy {
    pub fn new(schedule: Schedule, budgets: Vec<Budget>) -> Result<Self> {
        let ok = match &schedule {
            Schedule::Constant(v) => v.is_finite() && *v >= 0.0,
            Schedule::Burst { len, power, period, start } => {
                power.is_finite() && *power >= 0.0 && *len > 0 && period.is_none_or(|p| p >= start + len)
            }
            Schedule::Table(values) => values.iter().all(|v| v.is_finite() && *v >= 0.0),
        };
        if !ok {
            return Err(invalid(format!("invalid attack schedule {schedule:?}")));
        }
        for b in &budgets {
            if !(b.kappa >= 0.0 && b.rate >= 0.0 && b.kappa.is_finite() && b.rate.is_finite()) {
                return Err(invalid(format!("budget parameters must be nonnegative, got {b:?}")));
            }
        }
        Ok(Self { schedule, budgets })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn budgets(&self) -> &[Budget] {
        &self.budgets
    }

    pub fn declared(&self, kind: BudgetKind) -> Option<Budget> {
        self.budgets.iter().copied().find(|b| b.kind == kind)
    }

    pub fn power_at(&self, t: u64) -> f64 {
        self.schedule.power_at(t)
    }

    pub fn trace(&self, horizon: usize) -> Vec<f64> {
        (0..horizon as u64).map(|t| self.power_at(t)).collect()
    }

    /// Checks every declared budget on the first `horizon` steps.
    pub fn check_declared(&self, horizon: usize) -> Result<()> {
        let trace = self.trace(horizon);
        for b in &self.budgets {
            let verdict = match b.kind {
                BudgetKind::Cumulative => crate::channel::verify_cumulative_budget(&trace, b.kappa, b.rate)?,
                BudgetKind::Windowed => crate::channel::verify_windowed_budget(&trace, b.kappa, b.rate)?,
            };
            if let crate::channel::BudgetVerdict::Violated { start, end, .. } = verdict {
                return Err(Error::BudgetViolated { start, end });
            }
        }
        Ok(())
    }
}

/// Source of custom disturbance samples. Implementations receive the step
/// index and a per-step random stream.
pub trait DisturbanceSampler: Send + Sync {
    fn sample(&self, t: u64, rng: &mut dyn RngCore, out: &mut [f64]);
}

/// Additive disturbance `w(t)`.
#[derive(Clone)]
pub enum DisturbanceModel {
    None,
    /// IID uniform on `[-half_width, half_width]` in every coordinate.
    Uniform { half_width: f64 },
    /// IID `N(0, std_dev^2)` in every coordinate.
    Gaussian { std_dev: f64 },
    Constant { value: Vec<f64> },
    /// `w(t) = w_P(t) + (1 - l(t)) B w_C(t)`: a plant-side term plus a
    /// disturbance on the control input that only reaches the plant when the
    /// packet is delivered.
    ControlPath {
        plant_side: Box<DisturbanceModel>,
        input_side: Box<DisturbanceModel>,
    },
    Custom {
        sampler: Arc<dyn DisturbanceSampler>,
        bound: Option<f64>,
        second_moment: Option<f64>,
    },
}

impl fmt::Debug for DisturbanceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::None => write!(f, "None"),
            Self::Uniform { half_width } => f.debug_struct("Uniform").field("half_width", half_width).finish(),
            Self::Gaussian { std_dev } => f.debug_struct("Gaussian").field("std_dev", std_dev).finish(),
            Self::Constant { value } => f.debug_struct("Constant").field("value", value).finish(),
            Self::ControlPath { plant_side, input_side } => f
                .debug_struct("ControlPath")
                .field("plant_side", plant_side)
                .field("input_side", input_side)
                .finish(),
            Self::Custom { bound, second_moment, .. } => f
                .debug_struct("Custom")
                .field("bound", bound)
                .field("second_moment", second_moment)
                .finish_non_exhaustive(),
        }
    }
}

impl DisturbanceModel {
    pub fn validate(&self, plant: &PlantModel) -> Result<()> {
        self.validate_dim(plant.state_dim(), plant.input_dim(), true)
    }

    fn validate_dim(&self, dim: usize, input_dim: usize, top: bool) -> Result<()> {
        match self {
            Self::None => Ok(()),
            Self::Uniform { half_width: s } | Self::Gaussian { std_dev: s } => {
                if s.is_finite() && *s >= 0.0 {
                    Ok(())
                } else {
                    Err(invalid(format!("disturbance scale must be nonnegative, got {s}")))
                }
            }
            Self::Constant { value } => {
                if value.len() != dim {
                    Err(Error::Dimension(format!(
                        "constant disturbance must have length {dim}, got {}",
                        value.len()
                    )))
                } else if value.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(invalid("constant disturbance must be finite"))
                }
            }
            Self::ControlPath { plant_side, input_side } => {
                if !top {
                    return Err(invalid("control-path disturbances cannot be nested"));
                }
                plant_side.validate_dim(dim, input_dim, false)?;
                input_side.validate_dim(input_dim, input_dim, false)
            }
            Self::Custom { .. } => Ok(()),
        }
    }

    /// Almost-sure bound `w_bar` on `||w(t)||_2`, when one exists.
    pub fn norm_bound(&self, plant: &PlantModel) -> Option<f64> {
        self.bound_dim(plant.state_dim(), plant)
    }

    fn bound_dim(&self, dim: usize, plant: &PlantModel) -> Option<f64> {
        match self {
            Self::None => Some(0.0),
            Self::Uniform { half_width } => Some(half_width * (dim as f64).sqrt()),
            Self::Gaussian { std_dev } => (*std_dev == 0.0).then_some(0.0),
            Self::Constant { value } => Some(value.iter().map(|v| v * v).sum::<f64>().sqrt()),
            Self::ControlPath { plant_side, input_side } => {
                let wp = plant_side.bound_dim(dim, plant)?;
                let wc = input_side.bound_dim(plant.input_dim(), plant)?;
                Some(wp + spectral_norm(plant.b()) * wc)
            }
            Self::Custom { bound, .. } => *bound,
        }
    }

    /// Bound `w_tilde` on `E ||w(t)||_2^2`.
    pub fn second_moment_bound(&self, plant: &PlantModel) -> Option<f64> {
        self.second_moment_dim(plant.state_dim(), plant)
    }

    fn second_moment_dim(&self, dim: usize, plant: &PlantModel) -> Option<f64> {
        match self {
            Self::None => Some(0.0),
            Self::Uniform { half_width } => Some(dim as f64 * half_width * half_width / 3.0),
            Self::Gaussian { std_dev } => Some(dim as f64 * std_dev * std_dev),
            Self::Constant { value } => Some(value.iter().map(|v| v * v).sum()),
            Self::ControlPath { plant_side, input_side } => {
                // Minkowski in L2(P).
                let wp = plant_side.second_moment_dim(dim, plant)?.sqrt();
                let wc = input_side.second_moment_dim(plant.input_dim(), plant)?.sqrt();
                let s = wp + spectral_norm(plant.b()) * wc;
                Some(s * s)
            }
            Self::Custom { second_moment, bound, .. } => second_moment.or(bound.map(|b| b * b)),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Self::None)
    }

    /// Fills `out` with a sample. `ControlPath` is composed by the simulator
    /// and must not be sampled through this method.
    pub(crate) fn sample_into(&self, t: u64, rng: &mut dyn RngCore, out: &mut [f64]) {
        use rand::Rng;
        match self {
            Self::None => out.fill(0.0),
            Self::Uniform { half_width } => {
                for o in out.iter_mut() {
                    *o = if *half_width > 0.0 { rng.random_range(-half_width..=*half_width) } else { 0.0 };
                }
            }
            Self::Gaussian { std_dev } => {
                let normal = rand_distr::Normal::new(0.0, *std_dev).expect("validated std_dev");
                for o in out.iter_mut() {
                    *o = rand_distr::Distribution::sample(&normal, rng);
                }
            }
            Self::Constant { value } => out.copy_from_slice(value),
            Self::ControlPath { .. } => unreachable!("control-path disturbance is composed by the simulator"),
            Self::Custom { sampler, .. } => sampler.sample(t, rng, out),
        }
    }
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    crate::analysis::spectral_norm(m)
}

/// One recorded step: the state at `t` and the channel/disturbance draws that
/// drive the transition to `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub t: u64,
    pub x: Vec<f64>,
    pub v: f64,
    pub failed: bool,
    pub xi: f64,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub run_index: u64,
    pub steps: Vec<Step>,
}

impl Trajectory {
    /// Largest relative error of the stored states against the recursion,
    /// recomputed independently of the simulator's kernel.
    pub fn replay_error(&self, plant: &PlantModel) -> f64 {
        let mut worst: f64 = 0.0;
        for pair in self.steps.windows(2) {
            let (cur, next) = (&pair[0], &pair[1]);
            let x = DVector::from_column_slice(&cur.x);
            let w = DVector::from_column_slice(&cur.w);
            let predicted = plant.step(&x, cur.failed, &w);
            let actual = DVector::from_column_slice(&next.x);
            let scale = predicted.norm().max(x.norm()).max(1e-300);
            worst = worst.max((predicted - actual).norm() / scale);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(v: &[&[f64]]) -> Vec<Vec<f64>> {
        v.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn plant_dimension_checks() {
        let a = rows(&[&[0.1, -1.0], &[1.1, 1.8]]);
        let b = rows(&[&[0.0], &[1.0]]);
        let k = rows(&[&[-0.9277, -1.2615]]);
        assert!(PlantModel::from_rows(&a, &b, &k, &[1.0, 1.0]).is_ok());
        assert!(matches!(PlantModel::from_rows(&a, &b, &k, &[1.0]), Err(Error::Dimension(_))));
        let k_bad = rows(&[&[-0.9277, -1.2615, 0.0]]);
        assert!(matches!(PlantModel::from_rows(&a, &b, &k_bad, &[1.0, 1.0]), Err(Error::Dimension(_))));
        let b_bad = rows(&[&[0.0], &[1.0], &[2.0]]);
        assert!(matches!(PlantModel::from_rows(&a, &b_bad, &k, &[1.0, 1.0]), Err(Error::Dimension(_))));
        let a_bad = rows(&[&[0.1, -1.0]]);
        assert!(PlantModel::from_rows(&a_bad, &b, &k, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn channel_params_must_be_positive() {
        assert!(ChannelParams::new(1.0, 3.0, 0.4).is_ok());
        assert!(ChannelParams::new(0.0, 3.0, 0.4).is_err());
        assert!(ChannelParams::new(1.0, -3.0, 0.4).is_err());
        assert!(ChannelParams::new(1.0, 3.0, f64::NAN).is_err());
    }

    #[test]
    fn burst_schedule_with_period() {
        let s = Schedule::Burst { start: 2, len: 3, power: 7.0, period: Some(10) };
        let trace: Vec<f64> = (0..20).map(|t| s.power_at(t)).collect();
        assert_eq!(&trace[..10], &[0.0, 0.0, 7.0, 7.0, 7.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&trace[10..], &trace[..10]);
    }

    #[test]
    fn table_schedule_is_zero_past_end() {
        let s = Schedule::Table(Arc::from(vec![1.0, 2.0]));
        assert_eq!((s.power_at(0), s.power_at(1), s.power_at(2)), (1.0, 2.0, 0.0));
    }

    #[test]
    fn negative_powers_rejected() {
        assert!(AttackStrategy::new(Schedule::Constant(-1.0), vec![]).is_err());
        assert!(AttackStrategy::new(Schedule::Table(Arc::from(vec![0.0, -0.1])), vec![]).is_err());
    }

    #[test]
    fn disturbance_bounds() {
        let plant = crate::presets::benchmark_plant();
        let u = DisturbanceModel::Uniform { half_width: 0.5 };
        assert!((u.norm_bound(&plant).unwrap() - 0.5 * 2f64.sqrt()).abs() < 1e-15);
        assert!((u.second_moment_bound(&plant).unwrap() - 2.0 * 0.25 / 3.0).abs() < 1e-15);
        let g = DisturbanceModel::Gaussian { std_dev: 0.2 };
        assert_eq!(g.norm_bound(&plant), None);
        assert!((g.second_moment_bound(&plant).unwrap() - 0.08).abs() < 1e-15);
        let bad = DisturbanceModel::Constant { value: vec![1.0] };
        assert!(bad.validate(&plant).is_err());
    }
}
