use std::f64::consts::PI;

use rand::{Rng, RngCore};

use super::{Env, Step};
use crate::error::{check_len, Error, Result};
use crate::transition::SpaceSpec;

/// Torque-limited pendulum with state `[cos θ, sin θ, θdot]`, `θ = 0` upright.
#[derive(Debug, Clone, PartialEq)]
pub struct PendulumEnv {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    pub horizon: u64,
    spec: SpaceSpec,
}

impl Default for PendulumEnv {
    fn default() -> Self {
        Self::new(1.0, 1.0, 10.0, 0.05, 2.0, 8.0, 200).expect("default pendulum parameters are valid")
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl PendulumEnv {
    pub fn new(
        mass: f64,
        length: f64,
        gravity: f64,
        dt: f64,
        max_torque: f64,
        max_speed: f64,
        horizon: u64,
    ) -> Result<Self> {
        for (name, v) in [
            ("mass", mass),
            ("length", length),
            ("dt", dt),
            ("max_torque", max_torque),
            ("max_speed", max_speed),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("pendulum {name} must be positive, got {v}")));
            }
        }
        if !gravity.is_finite() {
            return Err(Error::param("pendulum gravity must be finite"));
        }
        if horizon == 0 {
            return Err(Error::param("horizon must be ≥ 1"));
        }
        Ok(Self {
            spec: SpaceSpec::symmetric(3, 1, max_torque)?,
            mass,
            length,
            gravity,
            dt,
            max_torque,
            max_speed,
            horizon,
        })
    }

    /// Integrates one step from an angle, ignoring the observation encoding.
    pub fn integrate(&self, theta: f64, theta_dot: f64, torque: f64) -> (f64, Vec<f64>) {
        let u = torque.clamp(-self.max_torque, self.max_torque);
        let th = wrap_angle(theta);
        let reward = -(th * th + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
        let accel = 3.0 * self.gravity / (2.0 * self.length) * theta.sin()
            + 3.0 / (self.mass * self.length * self.length) * u;
        let new_dot = (theta_dot + accel * self.dt).clamp(-self.max_speed, self.max_speed);
        let new_theta = theta + new_dot * self.dt;
        (reward, vec![new_theta.cos(), new_theta.sin(), new_dot])
    }

    fn check(&self, s: &[f64], a: &[f64]) -> Result<()> {
        check_len("state", 3, s.len())?;
        check_len("action", 1, a.len())?;
        if s.iter().chain(a).any(|v| !v.is_finite()) {
            return Err(Error::invalid("state and action must be finite"));
        }
        Ok(())
    }
}

impl Env for PendulumEnv {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn spec(&self) -> &SpaceSpec {
        &self.spec
    }

    fn horizon(&self) -> u64 {
        self.horizon
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let theta = rng.random_range(-PI..PI);
        let theta_dot = rng.random_range(-1.0..1.0);
        vec![theta.cos(), theta.sin(), theta_dot]
    }

    fn step(&self, s: &[f64], a: &[f64], _rng: &mut dyn RngCore) -> Result<Step> {
        self.check(s, a)?;
        let norm = s[0] * s[0] + s[1] * s[1];
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "pendulum state needs cos² + sin² = 1, got {norm}"
            )));
        }
        let (reward, next_state) = self.integrate(s[1].atan2(s[0]), s[2], a[0]);
        Ok(Step {
            next_state,
            reward,
            done: false,
        })
    }

    /// Interpolated observations leave the unit circle, so the angle is read
    /// back with `atan2` and the speed is taken as given.
    fn dynamics(&self, s: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(s, a)?;
        Ok(self.integrate(s[1].atan2(s[0]), s[2], a[0]))
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Scripted controller: energy pumping far from the top, PD stabilization
/// close to it. Used as a performance reference for learned policies.
#[derive(Debug, Clone, PartialEq)]
pub struct SwingUpController {
    pub energy_gain: f64,
    pub kp: f64,
    pub kd: f64,
    /// Switch to PD once `cos θ` exceeds this.
    pub capture_cos: f64,
}

impl Default for SwingUpController {
    fn default() -> Self {
        Self {
            energy_gain: 0.5,
            kp: 10.0,
            kd: 2.0,
            capture_cos: 0.85,
        }
    }
}

impl SwingUpController {
    pub fn act(&self, env: &PendulumEnv, s: &[f64]) -> f64 {
        let theta = s[1].atan2(s[0]);
        let omega = s[2];
        let u = if s[0] > self.capture_cos {
            -(self.kp * theta + self.kd * omega)
        } else {
            // zero at the upright rest state, negative below it
            let k = 3.0 * env.gravity / (2.0 * env.length);
            let energy = 0.5 * omega * omega + k * (theta.cos() - 1.0);
            let push = -self.energy_gain * energy * omega;
            if push.abs() < 1e-9 {
                // at rest at the bottom: kick in a fixed direction
                env.max_torque
            } else {
                push
            }
        };
        u.clamp(-env.max_torque, env.max_torque)
    }

    /// Undiscounted return of one episode from `s0`.
    pub fn episode_return(&self, env: &PendulumEnv, s0: &[f64]) -> f64 {
        let mut s = s0.to_vec();
        let mut total = 0.0;
        for _ in 0..env.horizon {
            let u = self.act(env, &s);
            let (r, next) = env.integrate(s[1].atan2(s[0]), s[2], u);
            total += r;
            s = next;
        }
        total
    }

    /// Mean return over `episodes` resets drawn from `rng`.
    pub fn mean_return(&self, env: &PendulumEnv, episodes: usize, rng: &mut dyn RngCore) -> f64 {
        let total: f64 = (0..episodes).map(|_| self.episode_return(env, &env.reset(rng))).sum();
        total / episodes as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct transcription of the rigid-pendulum update on the raw angle.
    fn oracle_rollout(theta0: f64, dot0: f64, torques: &[f64]) -> Vec<(f64, f64, f64, f64)> {
        let (g, m, l, dt) = (10.0f64, 1.0f64, 1.0f64, 0.05f64);
        let mut th = theta0;
        let mut dot = dot0;
        let mut out = Vec::new();
        for &u0 in torques {
            let u = u0.max(-2.0).min(2.0);
            let mut wrapped = th % (2.0 * PI);
            if wrapped >= PI {
                wrapped -= 2.0 * PI;
            } else if wrapped < -PI {
                wrapped += 2.0 * PI;
            }
            let cost = wrapped * wrapped + 0.1 * dot * dot + 0.001 * u * u;
            let mut nd = dot + (3.0 * g / (2.0 * l) * th.sin() + 3.0 / (m * l * l) * u) * dt;
            nd = nd.max(-8.0).min(8.0);
            th += nd * dt;
            dot = nd;
            out.push((th.cos(), th.sin(), dot, -cost));
        }
        out
    }

    #[test]
    fn upright_rest_is_an_equilibrium() {
        let env = PendulumEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let step = env.step(&[1.0, 0.0, 0.0], &[0.0], &mut rng).unwrap();
        assert_eq!(step.next_state, vec![1.0, 0.0, 0.0]);
        assert_eq!(step.reward, 0.0);
        assert!(!step.done);
    }

    #[test]
    fn rollout_matches_oracle() {
        let env = PendulumEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let s0 = env.reset(&mut rng);
        let torques: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..3.0)).collect();
        let theta0 = s0[1].atan2(s0[0]);
        let expected = oracle_rollout(theta0, s0[2], &torques);
        let mut s = s0;
        for (u, (c, sn, d, r)) in torques.iter().zip(expected) {
            let step = env.step(&s, &[*u], &mut rng).unwrap();
            // the env re-reads θ through atan2 each step, the oracle keeps the raw angle
            for (x, y) in step.next_state.iter().zip([c, sn, d]) {
                assert!((x - y).abs() < 1e-10);
            }
            assert!((step.reward - r).abs() < 1e-10);
            let n = step.next_state[0].powi(2) + step.next_state[1].powi(2);
            assert!((n - 1.0).abs() < 1e-9);
            s = step.next_state;
        }
    }

    #[test]
    fn rewards_are_never_positive_and_speed_is_clamped() {
        let env = PendulumEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = env.reset(&mut rng);
        for _ in 0..2000 {
            let u = rng.random_range(-5.0..5.0);
            let step = env.step(&s, &[u], &mut rng).unwrap();
            assert!(step.reward <= 0.0);
            assert!(step.next_state[2].abs() <= env.max_speed);
            s = step.next_state;
        }
    }

    #[test]
    fn inconsistent_state_rejected() {
        let env = PendulumEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(env.step(&[1.0, 1.0, 0.0], &[0.0], &mut rng).is_err());
        assert!(env.step(&[1.0, 0.0], &[0.0], &mut rng).is_err());
        // the lenient map accepts off-circle points
        assert!(env.dynamics(&[0.5, 0.5, 0.0], &[0.0]).is_ok());
    }

    #[test]
    fn resets_cover_documented_bounds() {
        let env = PendulumEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let (mut sum_theta, mut sum_dot) = (0.0, 0.0);
        for _ in 0..n {
            let s = env.reset(&mut rng);
            let theta = s[1].atan2(s[0]);
            assert!(s[2].abs() <= 1.0);
            sum_theta += theta;
            sum_dot += s[2];
        }
        let sd_theta = PI / 3f64.sqrt() / (n as f64).sqrt();
        let sd_dot = 1.0 / 3f64.sqrt() / (n as f64).sqrt();
        assert!((sum_theta / n as f64).abs() < 3.0 * sd_theta);
        assert!((sum_dot / n as f64).abs() < 3.0 * sd_dot);
    }

    #[test]
    fn swing_up_controller_balances() {
        let env = PendulumEnv::default();
        let ctrl = SwingUpController::default();
        // from hanging at rest it should end upright
        let mut s = vec![-1.0, 0.0, 0.0];
        for _ in 0..env.horizon {
            let u = ctrl.act(&env, &s);
            s = env.integrate(s[1].atan2(s[0]), s[2], u).1;
        }
        assert!(s[0] > 0.99, "final state {s:?}");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mean = ctrl.mean_return(&env, 200, &mut rng);
        assert!(mean > -200.0, "controller mean return {mean}");
    }
}
