//! SINR-driven packet failure model.
//!
//! A packet sent while the attacker emits interference power `v` is lost with
//! probability `p(v) = 2 Q(sqrt(c xi / (v + sigma)))`, where `Q` is the
//! standard Gaussian tail. Losses at different steps are conditionally
//! independent given the powers.

mod budget;
mod envelope;

pub use budget::{
    max_consecutive_duration, max_power_for_duration, verify_cumulative_budget, verify_windowed_budget,
    BudgetVerdict, Duration,
};
pub use envelope::{phat, validation_grid, EnvelopeShape, PHatEnvelope};

use crate::error::{invalid, Result};
use crate::model::ChannelParams;

/// Gaussian tail probability `Q(y) = P[N(0,1) > y]`.
pub fn q_function(y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(invalid(format!("q_function argument must be finite, got {y}")));
    }
    Ok(q_unchecked(y))
}

#[inline]
pub(crate) fn q_unchecked(y: f64) -> f64 {
    0.5 * libm::erfc(y * std::f64::consts::FRAC_1_SQRT_2)
}

/// Failure probability at interference power `v`.
pub fn failure_probability(v: f64, params: &ChannelParams) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(invalid(format!("interference power must be nonnegative, got {v}")));
    }
    Ok(failure_probability_unchecked(v, params))
}

#[inline]
pub(crate) fn failure_probability_unchecked(v: f64, params: &ChannelParams) -> f64 {
    if v.is_infinite() {
        return 1.0;
    }
    let sinr = params.c * params.xi / (v + params.sigma);
    (2.0 * q_unchecked(sinr.sqrt())).clamp(0.0, 1.0)
}

/// Failure indicator for a uniform draw `u`: lost iff `u <= p(v)`.
pub fn sample_failure(v: f64, params: &ChannelParams, u: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&u) {
        return Err(invalid(format!("uniform draw must lie in [0, 1], got {u}")));
    }
    Ok(u <= failure_probability(v, params)?)
}

/// Inverse of `p` on `[0, inf)` by bisection to absolute tolerance `tol`.
/// `target` must lie strictly between `p(0)` and 1.
pub fn inverse_failure_probability(target: f64, params: &ChannelParams, tol: f64) -> Result<f64> {
    let floor = failure_probability_unchecked(0.0, params);
    if !(target > floor) {
        return Err(crate::Error::Unreachable { target, floor });
    }
    if target >= 1.0 - 1e-15 {
        return Err(crate::Error::Saturated(target));
    }
    let mut hi = 1.0;
    while failure_probability_unchecked(hi, params) < target {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(crate::Error::Saturated(target));
        }
    }
    let mut lo = 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if failure_probability_unchecked(mid, params) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bench() -> ChannelParams {
        ChannelParams::new(1.0, 3.0, 0.4).unwrap()
    }

    /// Trapezoidal integral of the standard normal density on `[a, b]`.
    fn trapezoid_tail(a: f64, b: f64, n: usize) -> f64 {
        let phi = |s: f64| (-0.5 * s * s).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let h = (b - a) / n as f64;
        let inner: f64 = (1..n).map(|i| phi(a + i as f64 * h)).sum();
        h * (0.5 * (phi(a) + phi(b)) + inner)
    }

    #[test]
    fn q_symmetry_and_reflection() {
        assert_eq!(q_function(0.0).unwrap(), 0.5);
        let y = 0.7;
        assert!((q_function(-y).unwrap() - (1.0 - q_function(y).unwrap())).abs() < 1e-15);
    }

    #[test]
    fn q_matches_quadrature() {
        let oracle = trapezoid_tail(1.0, 12.0, 2_000_000);
        assert!((q_function(1.0).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn q_rejects_non_finite() {
        assert!(q_function(f64::NAN).is_err());
        assert!(q_function(f64::INFINITY).is_err());
    }

    #[test]
    fn failure_probability_at_zero_matches_quadrature() {
        let y = 7.5f64.sqrt();
        let oracle = 2.0 * trapezoid_tail(y, y + 12.0, 2_000_000);
        let p0 = failure_probability(0.0, &bench()).unwrap();
        assert!((p0 - oracle).abs() < 1e-10, "{p0} vs {oracle}");
    }

    #[test]
    fn failure_probability_limits_and_monotonicity() {
        let ch = bench();
        assert!((failure_probability(1e12, &ch).unwrap() - 1.0).abs() < 1e-5);
        assert!(failure_probability(1.0, &ch).unwrap() > failure_probability(0.0, &ch).unwrap());
        assert!(failure_probability(-0.1, &ch).is_err());
    }

    #[test]
    fn sample_failure_edges() {
        let ch = bench();
        assert!(sample_failure(0.0, &ch, 0.0).unwrap());
        assert!(!sample_failure(0.0, &ch, 1.0).unwrap());
        assert!(sample_failure(0.0, &ch, 1.5).is_err());
        assert!(sample_failure(0.0, &ch, -0.1).is_err());
    }

    #[test]
    fn inverse_round_trips() {
        let ch = bench();
        for target in [0.1, 0.5, 0.9, 0.99] {
            let v = inverse_failure_probability(target, &ch, 1e-10).unwrap();
            assert!((failure_probability(v, &ch).unwrap() - target).abs() < 1e-9);
        }
        assert!(matches!(
            inverse_failure_probability(0.001, &ch, 1e-10),
            Err(crate::Error::Unreachable { .. })
        ));
        assert!(matches!(inverse_failure_probability(1.0, &ch, 1e-10), Err(crate::Error::Saturated(_))));
    }
}
