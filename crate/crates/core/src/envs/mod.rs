//! Toy continuous-control tasks whose dynamics are known in closed form, so
//! interpolated transitions can be checked against the true manifold.

use rand::RngCore;

use crate::error::Result;
use crate::transition::SpaceSpec;

pub mod linear;
pub mod pendulum;

pub use linear::LinearEnv;
pub use pendulum::{PendulumEnv, SwingUpController};

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Genuine termination only; reaching the horizon never sets this.
    pub done: bool,
}

/// Environments are stateless: the caller carries the current state, which
/// keeps rollouts and residual checks pure functions of their inputs.
pub trait Env: Send + Sync {
    fn name(&self) -> &'static str;

    fn spec(&self) -> &SpaceSpec;

    fn horizon(&self) -> u64;

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    fn step(&self, s: &[f64], a: &[f64], rng: &mut dyn RngCore) -> Result<Step>;

    /// Noise-free `(reward, next_state)` at an arbitrary, possibly
    /// interpolated, state-action pair. Errors when the env is stochastic.
    fn dynamics(&self, s: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn is_deterministic(&self) -> bool;
}
