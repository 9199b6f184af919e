//! Simulation and stability analysis for networked control loops whose
//! controller-to-plant link is a wireless channel exposed to a
//! power-budgeted jamming attacker, with additive disturbance.
//!
//! - [`model`]: plant, channel, disturbance, attack schedule and trajectory types.
//! - [`channel`]: SINR failure probability, concave envelope, failure sampling
//!   and attack-budget verification.
//! - [`attacks`]: constant, burst and sleep-then-jam schedules.
//! - [`analysis`]: P-induced norms, stability conditions, admissible budgets
//!   and moment-bound constants.
//! - [`sim`]: seeded closed-loop simulation, Monte Carlo estimators and the
//!   adaptive transmission-power countermeasure.
//! - [`cli`]: config-driven experiment runner behind the `jamsim` binary.

pub mod analysis;
pub mod attacks;
pub mod channel;
pub mod cli;
pub mod error;
pub mod model;
pub mod presets;
pub mod sim;

pub use error::{Error, Result};
