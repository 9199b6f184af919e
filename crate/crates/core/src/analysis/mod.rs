//! Stability conditions and moment-bound constants in a P-induced norm.
//!
//! Every check works with the pair `||A||_P` (open loop, packet lost) and
//! `||A + BK||_P` (packet delivered), weighted by the envelope `phat` of the
//! failure probability at the attacker's admissible average power.

mod constants;
mod linalg;

pub use constants::{
    bound_constants_prop1, bound_constants_thm1, bound_constants_thm2, find_t_star, lemma_constants,
    BoundConstants, LemmaConstants,
};
pub use linalg::{spectral_norm, symmetric_eigen};

use nalgebra::DMatrix;

use crate::channel::PHatEnvelope;
use crate::error::{invalid, Result};
use crate::model::{BudgetKind, PlantModel};

const SYMMETRY_TOL: f64 = 1e-12;

/// Default cap returned by [`max_admissible_v`] when the condition never fails.
pub const DEFAULT_LEVEL_CAP: f64 = 1e6;
/// Absolute tolerance of the admissible-level bisection.
pub const LEVEL_TOL: f64 = 1e-4;

/// Symmetric positive-definite weight `P` of the vector norm
/// `||x||_P = sqrt(x^T P x)`, with the norm-equivalence constants
/// `c1 ||y||_P <= ||y||_2 <= c2 ||y||_P`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormContext {
    p: DMatrix<f64>,
    sqrt_p: DMatrix<f64>,
    inv_sqrt_p: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    pub c1: f64,
    pub c2: f64,
}

impl NormContext {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() == 0 || p.nrows() != p.ncols() {
            return Err(invalid("P must be a non-empty square matrix"));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(invalid("P must be finite"));
        }
        let asym = (&p - p.transpose()).abs().max();
        if asym >= SYMMETRY_TOL {
            return Err(invalid(format!("P is not symmetric (max |P - P^T| = {asym:e})")));
        }
        let (values, vectors) = symmetric_eigen(&p);
        let (lmin, lmax) = (values[0], values[values.len() - 1]);
        if !(lmin > 0.0) {
            return Err(invalid(format!("P is not positive definite (smallest eigenvalue {lmin})")));
        }
        Ok(Self {
            sqrt_p: linalg::symmetric_function(&values, &vectors, f64::sqrt),
            inv_sqrt_p: linalg::symmetric_function(&values, &vectors, |l| 1.0 / l.sqrt()),
            c1: 1.0 / lmax.sqrt(),
            c2: 1.0 / lmin.sqrt(),
            eigenvalues: values,
            eigenvectors: vectors,
            p,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is SPD")
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Eigenvalues of `P`, ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenvectors of `P` as columns, matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn vector_norm(&self, x: &nalgebra::DVector<f64>) -> f64 {
        (x.transpose() * &self.p * x)[(0, 0)].max(0.0).sqrt()
    }

    /// `sup ||M x||_P / ||x||_P`, the largest singular value of `P^{1/2} M P^{-1/2}`.
    pub fn induced_norm(&self, m: &DMatrix<f64>) -> Result<f64> {
        if m.nrows() != self.p.nrows() || m.ncols() != self.p.nrows() {
            return Err(crate::Error::Dimension(format!(
                "matrix is {}x{}, P is {}x{}",
                m.nrows(),
                m.ncols(),
                self.p.nrows(),
                self.p.nrows()
            )));
        }
        Ok(spectral_norm(&(&self.sqrt_p * m * &self.inv_sqrt_p)))
    }
}

/// Induced norm of `m` under `||.||_P`.
pub fn p_induced_norm(m: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<f64> {
    NormContext::new(p.clone())?.induced_norm(m)
}

/// `(c1, c2) = (1/sqrt(lambda_max(P)), 1/sqrt(lambda_min(P)))`.
pub fn norm_equivalence_constants(p: &DMatrix<f64>) -> Result<(f64, f64)> {
    let ctx = NormContext::new(p.clone())?;
    Ok((ctx.c1, ctx.c2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    /// `(1 - phat) ||A+BK|| + phat ||A|| < 1` at a cumulative budget rate:
    /// geometric decay of the first moment without disturbance.
    FirstMoment,
    /// `(1 - phat) ln ||A+BK|| + phat ln ||A|| < 0`: almost-sure stability.
    AlmostSure,
    /// Same inequality as `FirstMoment`, at a windowed budget rate: bounded
    /// first moment under almost surely bounded disturbance.
    BoundedDisturbance,
    /// `(1 - phat) ||A+BK||^2 + phat ||A||^2 < 1` at a windowed budget rate:
    /// bounded first moment under finite-second-moment disturbance.
    SecondMoment,
}

impl Condition {
    pub const ALL: [Condition; 4] =
        [Condition::FirstMoment, Condition::AlmostSure, Condition::BoundedDisturbance, Condition::SecondMoment];

    pub fn name(&self) -> &'static str {
        match self {
            Condition::FirstMoment => "first-moment",
            Condition::AlmostSure => "almost-sure",
            Condition::BoundedDisturbance => "bounded-disturbance",
            Condition::SecondMoment => "second-moment",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Budget inequality the attacker must satisfy for this condition to apply.
    pub fn budget_kind(&self) -> BudgetKind {
        match self {
            Condition::FirstMoment | Condition::AlmostSure => BudgetKind::Cumulative,
            Condition::BoundedDisturbance | Condition::SecondMoment => BudgetKind::Windowed,
        }
    }

    /// Left-hand side of the condition for a given envelope value.
    pub fn lhs(&self, norms: &LoopNorms, phat: f64) -> f64 {
        let (open, closed) = (norms.open, norms.closed);
        match self {
            Condition::FirstMoment | Condition::BoundedDisturbance => (1.0 - phat) * closed + phat * open,
            Condition::SecondMoment => (1.0 - phat) * closed * closed + phat * open * open,
            Condition::AlmostSure => {
                // Zero-weight terms are dropped so ln(0) only matters when weighted.
                let mut acc = 0.0;
                if phat < 1.0 {
                    acc += (1.0 - phat) * closed.ln();
                }
                if phat > 0.0 {
                    acc += phat * open.ln();
                }
                acc
            }
        }
    }

    pub fn holds(&self, lhs: f64) -> bool {
        match self {
            Condition::AlmostSure => lhs < 0.0,
            _ => lhs < 1.0,
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `||A||_P` and `||A+BK||_P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopNorms {
    pub open: f64,
    pub closed: f64,
}

impl LoopNorms {
    pub fn new(plant: &PlantModel, ctx: &NormContext) -> Result<Self> {
        Ok(Self { open: ctx.induced_norm(plant.a())?, closed: ctx.induced_norm(&plant.closed_loop())? })
    }

    /// `zeta1 = ||A|| - ||A+BK||`.
    pub fn zeta1(&self) -> f64 {
        self.open - self.closed
    }

    /// `zeta0 = ||A+BK||`.
    pub fn zeta0(&self) -> f64 {
        self.closed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCertificate {
    pub condition: Condition,
    pub holds: bool,
    pub lhs: f64,
    pub zeta1: f64,
    pub zeta0: f64,
    /// Budget offset the constants were derived for (0 when only the condition was checked).
    pub kappa: f64,
    /// Average interference-power level the condition was evaluated at.
    pub level: f64,
    pub constants: Option<BoundConstants>,
}

pub fn check_condition(
    kind: Condition,
    plant: &PlantModel,
    ctx: &NormContext,
    env: &PHatEnvelope,
    v: f64,
) -> Result<StabilityCertificate> {
    if !(v >= 0.0) {
        return Err(invalid(format!("interference level must be nonnegative, got {v}")));
    }
    let norms = LoopNorms::new(plant, ctx)?;
    Ok(certificate_for(kind, &norms, env, v))
}

pub(crate) fn certificate_for(kind: Condition, norms: &LoopNorms, env: &PHatEnvelope, v: f64) -> StabilityCertificate {
    let lhs = kind.lhs(norms, env.eval(v));
    StabilityCertificate {
        condition: kind,
        holds: kind.holds(lhs),
        lhs,
        zeta1: norms.zeta1(),
        zeta0: norms.zeta0(),
        kappa: 0.0,
        level: v,
        constants: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelStatus {
    Bounded,
    /// The condition still held at the cap.
    Unbounded,
    /// The condition fails even without an attacker.
    NeverStable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibleLevel {
    pub level: f64,
    pub status: LevelStatus,
}

/// Largest average power at which `kind` holds, to [`LEVEL_TOL`].
pub fn max_admissible_v(
    kind: Condition,
    plant: &PlantModel,
    ctx: &NormContext,
    env: &PHatEnvelope,
) -> Result<AdmissibleLevel> {
    max_admissible_v_capped(kind, plant, ctx, env, DEFAULT_LEVEL_CAP)
}

pub fn max_admissible_v_capped(
    kind: Condition,
    plant: &PlantModel,
    ctx: &NormContext,
    env: &PHatEnvelope,
    cap: f64,
) -> Result<AdmissibleLevel> {
    let norms = LoopNorms::new(plant, ctx)?;
    let holds = |v: f64| kind.holds(kind.lhs(&norms, env.eval(v)));
    if !holds(0.0) {
        return Ok(AdmissibleLevel { level: 0.0, status: LevelStatus::NeverStable });
    }
    let mut lo = 0.0;
    let mut hi = 1.0f64.min(cap);
    while holds(hi) {
        if hi >= cap {
            return Ok(AdmissibleLevel { level: cap, status: LevelStatus::Unbounded });
        }
        lo = hi;
        hi = (hi * 2.0).min(cap);
    }
    while hi - lo > LEVEL_TOL {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(AdmissibleLevel { level: lo, status: LevelStatus::Bounded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{benchmark_channel, benchmark_p, benchmark_plant};

    fn setup() -> (PlantModel, NormContext, PHatEnvelope) {
        (
            benchmark_plant(),
            NormContext::new(benchmark_p()).unwrap(),
            PHatEnvelope::shifted(benchmark_channel()).unwrap(),
        )
    }

    #[test]
    fn identity_has_unit_norm() {
        let p = benchmark_p();
        assert!((p_induced_norm(&DMatrix::identity(2, 2), &p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equivalence_constants() {
        assert_eq!(norm_equivalence_constants(&DMatrix::identity(3, 3)).unwrap(), (1.0, 1.0));
        let (c1, c2) = norm_equivalence_constants(&DMatrix::from_diagonal(&nalgebra::dvector![1.0, 4.0])).unwrap();
        assert!((c1 - 0.5).abs() < 1e-15 && (c2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_p() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(NormContext::new(asym).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(NormContext::new(indefinite).is_err());
    }

    #[test]
    fn benchmark_closed_loop_contracts() {
        let (plant, ctx, _) = setup();
        let norms = LoopNorms::new(&plant, &ctx).unwrap();
        assert!(norms.closed < 1.0 && norms.open > 1.0);
    }

    #[test]
    fn benchmark_conditions_at_reported_levels() {
        let (plant, ctx, env) = setup();
        assert!(check_condition(Condition::FirstMoment, &plant, &ctx, &env, 1.29).unwrap().holds);
        assert!(check_condition(Condition::AlmostSure, &plant, &ctx, &env, 3.5).unwrap().holds);
        assert!(check_condition(Condition::SecondMoment, &plant, &ctx, &env, 0.345).unwrap().holds);
        assert!(!check_condition(Condition::FirstMoment, &plant, &ctx, &env, 1.3).unwrap().holds);
    }

    #[test]
    fn almost_sure_with_deadbeat_closed_loop() {
        // A + BK = 0.
        let plant = PlantModel::from_rows(&[vec![2.0]], &[vec![1.0]], &[vec![-2.0]], &[1.0]).unwrap();
        let ctx = NormContext::identity(1);
        let env = PHatEnvelope::shifted(benchmark_channel()).unwrap();
        let cert = check_condition(Condition::AlmostSure, &plant, &ctx, &env, 1.0).unwrap();
        assert!(cert.holds);
        assert_eq!(cert.lhs, f64::NEG_INFINITY);
    }

    #[test]
    fn admissible_levels() {
        let (plant, ctx, env) = setup();
        let first = max_admissible_v(Condition::FirstMoment, &plant, &ctx, &env).unwrap();
        assert_eq!(first.status, LevelStatus::Bounded);
        assert!((first.level - 1.29).abs() < 0.01);
        let stable = PlantModel::from_rows(&[vec![0.5]], &[vec![1.0]], &[vec![-0.2]], &[1.0]).unwrap();
        let lvl = max_admissible_v(Condition::FirstMoment, &stable, &NormContext::identity(1), &env).unwrap();
        assert_eq!(lvl.status, LevelStatus::Unbounded);
        assert_eq!(lvl.level, DEFAULT_LEVEL_CAP);
        let hopeless = PlantModel::from_rows(&[vec![3.0]], &[vec![1.0]], &[vec![-1.5]], &[1.0]).unwrap();
        let lvl = max_admissible_v(Condition::FirstMoment, &hopeless, &NormContext::identity(1), &env).unwrap();
        assert_eq!(lvl.status, LevelStatus::NeverStable);
    }
}
