use crate::error::{invalid, Error, Result};
use crate::model::ChannelParams;

use super::failure_probability_unchecked;

const GRID_POINTS: usize = 1000;
const GRID_MAX: f64 = 1e4;
const CONCAVITY_SLACK: f64 = 1e-12;
const SLOPE_SLACK: f64 = 1e-9;

/// Grid used to validate envelopes: `0` followed by log-spaced points up to `1e4`.
pub fn validation_grid() -> Vec<f64> {
    let lo: f64 = 1e-4;
    let steps = GRID_POINTS - 2;
    let ratio = (GRID_MAX / lo).ln() / steps as f64;
    std::iter::once(0.0).chain((0..=steps).map(|i| lo * (ratio * i as f64).exp())).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvelopeShape {
    /// `phat(v) = p(v + psi)`.
    Shifted { psi: f64 },
    /// Piecewise-linear through `(v, phat)` knots, constant past the last one.
    Tabulated { knots: Vec<(f64, f64)> },
}

/// Continuous, nondecreasing, concave upper bound of the failure probability.
/// Construction validates dominance, monotonicity, midpoint concavity and
/// nonincreasing secant slopes on [`validation_grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct PHatEnvelope {
    base: ChannelParams,
    shape: EnvelopeShape,
}

impl PHatEnvelope {
    /// Shift `psi = max(0, (c xi - 3 sigma) / 3)`: past `c xi / 3` on the
    /// `v + sigma` axis the failure probability is concave.
    pub fn shifted(base: ChannelParams) -> Result<Self> {
        let psi = ((base.c * base.xi - 3.0 * base.sigma) / 3.0).max(0.0);
        Self::with_shift(base, psi)
    }

    pub fn with_shift(base: ChannelParams, psi: f64) -> Result<Self> {
        if !(psi.is_finite() && psi >= 0.0) {
            return Err(invalid(format!("envelope shift must be nonnegative, got {psi}")));
        }
        Self::validated(Self { base, shape: EnvelopeShape::Shifted { psi } })
    }

    pub fn tabulated(base: ChannelParams, knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() || knots[0].0 != 0.0 {
            return Err(Error::Envelope("tabulated envelope must start at v = 0".into()));
        }
        if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::Envelope("knot abscissae must be strictly increasing".into()));
        }
        if knots.iter().any(|&(v, p)| !v.is_finite() || !(0.0..=1.0).contains(&p)) {
            return Err(Error::Envelope("knot values must be finite probabilities".into()));
        }
        if knots.last().map(|k| k.1) != Some(1.0) {
            return Err(Error::Envelope("last knot must reach 1 to dominate p beyond the table".into()));
        }
        let slopes: Vec<f64> = knots.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
        if let Some(i) = slopes.windows(2).position(|s| s[1] > s[0]) {
            return Err(Error::Envelope(format!("envelope is convex at knot v = {}", knots[i + 1].0)));
        }
        Self::validated(Self { base, shape: EnvelopeShape::Tabulated { knots } })
    }

    fn validated(env: Self) -> Result<Self> {
        let grid = validation_grid();
        let values: Vec<f64> = grid.iter().map(|&v| env.eval(v)).collect();
        for (&v, &ph) in grid.iter().zip(&values) {
            let p = failure_probability_unchecked(v, &env.base);
            if ph < p {
                return Err(Error::Envelope(format!("phat({v}) = {ph} is below p({v}) = {p}")));
            }
        }
        for (i, w) in values.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(Error::Envelope(format!("phat decreases between v = {} and {}", grid[i], grid[i + 1])));
            }
        }
        for (i, g) in grid.windows(2).enumerate() {
            let mid = env.eval(0.5 * (g[0] + g[1]));
            if mid < 0.5 * (values[i] + values[i + 1]) - CONCAVITY_SLACK {
                return Err(Error::Envelope(format!("midpoint concavity fails on [{}, {}]", g[0], g[1])));
            }
        }
        // Secant slopes of a concave function do not increase.
        for i in 0..grid.len() - 2 {
            let left = (values[i + 1] - values[i]) / (grid[i + 1] - grid[i]);
            let right = (values[i + 2] - values[i + 1]) / (grid[i + 2] - grid[i + 1]);
            if right > left + SLOPE_SLACK {
                return Err(Error::Envelope(format!("secant slopes increase around v = {}", grid[i + 1])));
            }
        }
        Ok(env)
    }

    pub fn base(&self) -> &ChannelParams {
        &self.base
    }

    pub fn shape(&self) -> &EnvelopeShape {
        &self.shape
    }

    /// Shift for the shifted construction.
    pub fn psi(&self) -> Option<f64> {
        match self.shape {
            EnvelopeShape::Shifted { psi } => Some(psi),
            EnvelopeShape::Tabulated { .. } => None,
        }
    }

    /// Evaluates `phat(v)` for `v >= 0` (negative inputs are treated as 0).
    pub fn eval(&self, v: f64) -> f64 {
        let v = v.max(0.0);
        match &self.shape {
            EnvelopeShape::Shifted { psi } => failure_probability_unchecked(v + psi, &self.base),
            EnvelopeShape::Tabulated { knots } => {
                let idx = knots.partition_point(|k| k.0 <= v);
                if idx >= knots.len() {
                    return knots[knots.len() - 1].1;
                }
                let (v0, p0) = knots[idx - 1];
                let (v1, p1) = knots[idx];
                p0 + (p1 - p0) * (v - v0) / (v1 - v0)
            }
        }
    }
}

pub fn phat(v: f64, env: &PHatEnvelope) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(invalid(format!("interference power must be nonnegative, got {v}")));
    }
    Ok(env.eval(v))
}
