//! Constants of the geometric moment bounds.
//!
//! All bounds rest on the same estimate: with `h(v) = a1 phat(v) + a0`, the
//! expected product `E prod_{i in window} (a1 l(i) + a0)` over a window of
//! length `T` is at most `h(kappa / T + rate)^T`. Picking the smallest `T*`
//! with `h(kappa / T* + rate) < 1` gives `theta = h(kappa / T* + rate)` and
//! `mu = (a1 + a0)^(T*-1) theta^-(T*-1)`.
//!
//! `mu` grows like `(||A|| / theta)^T*` and overflows `f64` for large budget
//! offsets, so multiplicative constants are carried as natural logarithms.

use crate::channel::PHatEnvelope;
use crate::error::{invalid, Error, Result};
use crate::model::PlantModel;

use super::{certificate_for, Condition, LoopNorms, NormContext, StabilityCertificate};

/// Search cap for [`find_t_star`].
pub const T_STAR_CAP: u64 = 1_000_000_000;

/// Smallest `T >= 1` with `h(kappa / T + v) < 1`, where `h` is built from
/// `(zeta1, zeta0)` or, when `squared`, from `(zeta1^2 + 2 zeta1 zeta0, zeta0^2)`.
pub fn find_t_star(zeta1: f64, zeta0: f64, env: &PHatEnvelope, kappa: f64, v: f64, squared: bool) -> Result<u64> {
    let (a1, a0) = affine_coefficients(zeta1, zeta0, squared);
    t_star_for(a1, a0, env, kappa, v)
}

fn affine_coefficients(zeta1: f64, zeta0: f64, squared: bool) -> (f64, f64) {
    if squared {
        (zeta1 * zeta1 + 2.0 * zeta1 * zeta0, zeta0 * zeta0)
    } else {
        (zeta1, zeta0)
    }
}

fn t_star_for(a1: f64, a0: f64, env: &PHatEnvelope, kappa: f64, v: f64) -> Result<u64> {
    if !(kappa >= 0.0 && v >= 0.0) {
        return Err(invalid(format!("kappa and v must be nonnegative (got {kappa}, {v})")));
    }
    let h = |x: f64| a1 * env.eval(x) + a0;
    if !(h(v) < 1.0) {
        return Err(invalid(format!("h({v}) = {} is not below 1; no T* exists", h(v))));
    }
    (1..=T_STAR_CAP)
        .find(|&t| h(kappa / t as f64 + v) < 1.0)
        .ok_or(Error::TStarDiverged { cap: T_STAR_CAP })
}

/// `(theta, mu, T*)` of the window-product bound `E prod <= mu theta^len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaConstants {
    pub theta: f64,
    pub ln_mu: f64,
    pub t_star: u64,
}

impl LemmaConstants {
    pub fn mu(&self) -> f64 {
        self.ln_mu.exp()
    }

    /// `ln d` with `d = mu / (1 - theta)`, the bound on the sum of window products.
    pub fn ln_sum_bound(&self) -> f64 {
        self.ln_mu - (1.0 - self.theta).ln()
    }

    /// `ln f` with `f = sqrt(mu) / (1 - sqrt(theta))`, the bound on the sum of
    /// root mean squares when these constants come from squared coefficients.
    pub fn ln_root_sum_bound(&self) -> f64 {
        0.5 * self.ln_mu - (1.0 - self.theta.sqrt()).ln()
    }

    /// `mu theta^len`.
    pub fn window_bound(&self, len: u64) -> f64 {
        (self.ln_mu + len as f64 * self.theta.ln()).exp()
    }
}

/// Constants for coefficients `a1, a0 >= 0` with `a1 phat(v) + a0 < 1`.
pub fn lemma_constants(a1: f64, a0: f64, env: &PHatEnvelope, kappa: f64, v: f64) -> Result<LemmaConstants> {
    if !(a1 >= 0.0 && a0 >= 0.0) {
        return Err(invalid(format!("affine coefficients must be nonnegative (got {a1}, {a0})")));
    }
    if a1 + a0 == 0.0 {
        // Every product vanishes; any theta in (0, 1) works with mu = 0.
        return Ok(LemmaConstants { theta: 0.5, ln_mu: f64::NEG_INFINITY, t_star: 1 });
    }
    let t_star = t_star_for(a1, a0, env, kappa, v)?;
    let theta = a1 * env.eval(kappa / t_star as f64 + v) + a0;
    let steps = (t_star - 1) as f64;
    let ln_mu = if t_star == 1 { 0.0 } else { steps * ((a1 + a0).ln() - theta.ln()) };
    Ok(LemmaConstants { theta, ln_mu, t_star })
}

/// Constants of `E ||x(t)||_2 <= mu theta^t ||x0||_2 + gain * scale`, where
/// `scale` is the disturbance bound `w_bar` or `sqrt(w_tilde)` depending on
/// the condition. Without disturbance `gain` is absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub theta: f64,
    pub ln_mu: f64,
    pub ln_gain: Option<f64>,
    pub t_star: u64,
    /// `T*` of the squared-coefficient window bound (second-moment case).
    pub t_star_squared: Option<u64>,
}

impl BoundConstants {
    pub fn mu(&self) -> f64 {
        self.ln_mu.exp()
    }

    /// `d_hat` or `f_hat`; may be `inf` when it exceeds the `f64` range.
    pub fn gain(&self) -> Option<f64> {
        self.ln_gain.map(f64::exp)
    }

    /// Natural log of the bound at step `t`.
    pub fn ln_bound(&self, t: u64, x0_norm: f64, disturbance_scale: f64) -> f64 {
        let decay = self.ln_mu + t as f64 * self.theta.ln() + x0_norm.ln();
        match self.ln_gain {
            Some(g) if disturbance_scale > 0.0 => log_add_exp(decay, g + disturbance_scale.ln()),
            _ => decay,
        }
    }

    pub fn bound(&self, t: u64, x0_norm: f64, disturbance_scale: f64) -> f64 {
        self.ln_bound(t, x0_norm, disturbance_scale).exp()
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

struct Prepared {
    norms: LoopNorms,
    ln_ratio: f64,
}

fn prepare(
    kind: Condition,
    plant: &PlantModel,
    ctx: &NormContext,
    env: &PHatEnvelope,
    kappa: f64,
    level: f64,
) -> Result<(Prepared, StabilityCertificate)> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(invalid(format!("budget offset must be nonnegative, got {kappa}")));
    }
    let norms = LoopNorms::new(plant, ctx)?;
    let mut cert = certificate_for(kind, &norms, env, level);
    if !cert.holds {
        return Err(Error::ConditionFails { condition: kind.name(), level, lhs: cert.lhs });
    }
    if norms.zeta1() < 0.0 {
        return Err(invalid(format!(
            "||A|| = {} is below ||A+BK|| = {}; window-product constants need ||A|| >= ||A+BK||",
            norms.open, norms.closed
        )));
    }
    cert.kappa = kappa;
    Ok((Prepared { norms, ln_ratio: (ctx.c2 / ctx.c1).ln() }, cert))
}

/// Constants `(theta_bar, mu_bar, T*)` of the disturbance-free first-moment
/// decay `E ||x(t)||_2 <= mu_bar theta_bar^t ||x0||_2` under a cumulative
/// budget `(kappa_bar, vbar)`.
pub fn bound_constants_prop1(
    plant: &PlantModel,
    ctx: &NormContext,
    env: &PHatEnvelope,
    kappa_bar: f64,
    vbar: f64,
) -> Result<StabilityCertificate> {
    let (prep, mut cert) = prepare(Condition::FirstMoment, plant, ctx, env, kappa_bar, vbar)?;
    let lemma = lemma_constants(prep.norms.zeta1(), prep.norms.zeta0(), env, kappa_bar, vbar)?;
    cert.constants = Some(BoundConstants {
        theta: lemma.theta,
        ln_mu: prep.ln_ratio + lemma.ln_mu,
        ln_gain: None,
        t_star: lemma.t_star,
        t_star_squared: None,
    });
    Ok(cert)
}

/// Constants `(theta_hat, mu_hat, d_hat, T*)` of
/// `E ||x(t)||_2 <= mu_hat theta_hat^t ||x0||_2 + d_hat w_bar` under a
/// windowed budget `(kappa_hat, vhat)` and `||w(t)||_2 <= w_bar`.
pub fn bound_constants_thm1(
    plant: &PlantModel,
    ctx: &NormContext,
    env: &PHatEnvelope,
    kappa_hat: f64,
    vhat: f64,
) -> Result<StabilityCertificate> {
    let (prep, mut cert) = prepare(Condition::BoundedDisturbance, plant, ctx, env, kappa_hat, vhat)?;
    let lemma = lemma_constants(prep.norms.zeta1(), prep.norms.zeta0(), env, kappa_hat, vhat)?;
    cert.constants = Some(BoundConstants {
        theta: lemma.theta,
        ln_mu: prep.ln_ratio + lemma.ln_mu,
        ln_gain: Some(prep.ln_ratio + log_add_exp(lemma.ln_sum_bound(), 0.0)),
        t_star: lemma.t_star,
        t_star_squared: None,
    });
    Ok(cert)
}

/// Constants `(theta_hat, mu_hat, f_hat, T*, T*_squared)` of
/// `E ||x(t)||_2 <= mu_hat theta_hat^t ||x0||_2 + f_hat max_i sqrt(E ||w(i)||^2)`
/// under a windowed budget `(kappa_hat, vhat)`.
pub fn bound_constants_thm2(
    plant: &PlantModel,
    ctx: &NormContext,
    env: &PHatEnvelope,
    kappa_hat: f64,
    vhat: f64,
) -> Result<StabilityCertificate> {
    let (prep, mut cert) = prepare(Condition::SecondMoment, plant, ctx, env, kappa_hat, vhat)?;
    let (z1, z0) = (prep.norms.zeta1(), prep.norms.zeta0());
    let linear = lemma_constants(z1, z0, env, kappa_hat, vhat)?;
    let (a1, a0) = affine_coefficients(z1, z0, true);
    let squared = lemma_constants(a1, a0, env, kappa_hat, vhat)?;
    cert.constants = Some(BoundConstants {
        theta: linear.theta,
        ln_mu: prep.ln_ratio + linear.ln_mu,
        ln_gain: Some(prep.ln_ratio + log_add_exp(squared.ln_root_sum_bound(), 0.0)),
        t_star: linear.t_star,
        t_star_squared: Some(squared.t_star),
    });
    Ok(cert)
}
