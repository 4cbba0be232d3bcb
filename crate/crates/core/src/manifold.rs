//! Distance of (possibly synthetic) transitions from the true transition
//! manifold of an environment with known dynamics.
//!
//! For a flat `[ŝ | â | r̂ | ŝ2]` the residual is
//! `sqrt(||ŝ2 - s2*(ŝ, â)||² + (r̂ - r*(ŝ, â))²)`, reward and next-state errors
//! weighted equally. Both components are kept so other weightings can be
//! recomputed from the CSV.

use std::io::Write;

use crate::envs::Env;
use crate::error::{Error, Result};
use crate::par;
use crate::strategies::TrainingBatch;
use crate::transition::FlatVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub total: f64,
    pub reward: f64,
    pub state: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub strategy: String,
    pub residuals: Vec<Residual>,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

pub fn flat_residual(env: &dyn Env, flat: &FlatVector) -> Result<Residual> {
    let spec = env.spec();
    crate::error::check_len("flat transition", spec.flat_len(), flat.len())?;
    let (r_true, s2_true) = env.dynamics(flat.state(spec), flat.action(spec))?;
    let reward = (flat.reward(spec) - r_true).abs();
    let state = flat
        .next_state(spec)
        .iter()
        .zip(&s2_true)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(Residual {
        total: reward.hypot(state),
        reward,
        state,
    })
}

/// Linear interpolation between order statistics (`q` in `[0, 1]`).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl ResidualReport {
    pub fn from_residuals(strategy: impl Into<String>, residuals: Vec<Residual>) -> Self {
        let mut sorted: Vec<f64> = residuals.iter().map(|r| r.total).collect();
        sorted.sort_by(f64::total_cmp);
        let mean = if sorted.is_empty() {
            f64::NAN
        } else {
            residuals.iter().map(|r| r.total).sum::<f64>() / residuals.len() as f64
        };
        Self {
            strategy: strategy.into(),
            mean,
            median: quantile(&sorted, 0.5),
            p95: quantile(&sorted, 0.95),
            residuals,
        }
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.residuals.iter().map(|r| r.total).fold(0.0, f64::max)
    }

    pub fn write_csv_header<W: Write>(out: &mut W) -> Result<()> {
        writeln!(out, "strategy,seed,sample_id,residual,reward_residual,state_residual")?;
        Ok(())
    }

    pub fn write_csv_rows<W: Write>(&self, out: &mut W, seed: u64) -> Result<()> {
        for (i, r) in self.residuals.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{:.16e},{:.16e},{:.16e}",
                self.strategy, seed, i, r.total, r.reward, r.state
            )?;
        }
        Ok(())
    }
}

/// Residual report over the interpolated items of `batch`; passthrough items
/// are real transitions and are left out.
pub fn residual(batch: &TrainingBatch, env: &dyn Env, strategy: &str) -> Result<ResidualReport> {
    if !env.is_deterministic() {
        return Err(Error::config("residuals need a noise-free environment"));
    }
    let picked: Vec<&FlatVector> = batch
        .flats
        .iter()
        .zip(&batch.interpolated)
        .filter(|(_, i)| **i)
        .map(|(f, _)| f)
        .collect();
    let residuals = par::try_map_indices(picked.len(), |i| flat_residual(env, picked[i]))?;
    Ok(ResidualReport::from_residuals(strategy, residuals))
}

/// Residuals of every row, interpolated or not.
pub fn residual_all(flats: &[FlatVector], env: &dyn Env, strategy: &str) -> Result<ResidualReport> {
    if !env.is_deterministic() {
        return Err(Error::config("residuals need a noise-free environment"));
    }
    let residuals = par::try_map_indices(flats.len(), |i| flat_residual(env, &flats[i]))?;
    Ok(ResidualReport::from_residuals(strategy, residuals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{LinearEnv, PendulumEnv};
    use crate::transition::{encode, Transition};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn real_flats(env: &dyn Env, n: usize, seed: u64) -> Vec<FlatVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = env.spec().clone();
        let mut s = env.reset(&mut rng);
        (0..n)
            .map(|i| {
                let a: Vec<f64> = (0..spec.action_dim())
                    .map(|j| rng.random_range(spec.action_low()[j]..spec.action_high()[j]))
                    .collect();
                let step = env.step(&s, &a, &mut rng).unwrap();
                let t = Transition {
                    s: s.clone(),
                    a,
                    r: step.reward,
                    s2: step.next_state.clone(),
                    done: false,
                    episode_id: 0,
                    step_idx: i as u64,
                };
                s = step.next_state;
                encode(&t, &spec).unwrap()
            })
            .collect()
    }

    #[test]
    fn real_transitions_have_zero_residual() {
        let lin = LinearEnv::default_with_seed(0).unwrap();
        let pend = PendulumEnv::default();
        for env in [&lin as &dyn Env, &pend] {
            let rep = residual_all(&real_flats(env, 500, 1), env, "real").unwrap();
            assert!(rep.max() < 1e-12, "{}: {}", env.name(), rep.max());
        }
    }

    #[test]
    fn known_offset_gives_known_residual() {
        let env = PendulumEnv::default();
        let mut flat = real_flats(&env, 1, 2).remove(0);
        let spec = env.spec().clone();
        flat.as_mut_slice()[spec.reward_index()] += 3.0;
        flat.as_mut_slice()[spec.reward_index() + 3] -= 4.0;
        let r = flat_residual(&env, &flat).unwrap();
        assert!((r.reward - 3.0).abs() < 1e-12);
        assert!((r.state - 4.0).abs() < 1e-12);
        assert!((r.total - 5.0).abs() < 1e-12);
    }

    #[test]
    fn passthrough_items_are_excluded_and_order_is_irrelevant() {
        let env = PendulumEnv::default();
        let flats = real_flats(&env, 40, 3);
        let mut batch = TrainingBatch::with_capacity(40);
        for (i, f) in flats.iter().enumerate() {
            let mut f = f.clone();
            if i % 2 == 0 {
                f.as_mut_slice()[3] += i as f64 * 0.01;
            }
            batch.flats.push(f);
            batch.interpolated.push(i % 2 == 0);
        }
        let rep = residual(&batch, &env, "x").unwrap();
        assert_eq!(rep.len(), 20);
        let mut reversed = batch.clone();
        reversed.flats.reverse();
        reversed.interpolated.reverse();
        let rev = residual(&reversed, &env, "x").unwrap();
        assert!((rep.mean - rev.mean).abs() < 1e-12);
        assert_eq!(rep.median, rev.median);
        assert_eq!(rep.p95, rev.p95);
    }

    #[test]
    fn summary_statistics() {
        let vals = [4.0, 1.0, 3.0, 2.0, 0.0];
        let rs = vals
            .iter()
            .map(|&v| Residual {
                total: v,
                reward: v,
                state: 0.0,
            })
            .collect();
        let rep = ResidualReport::from_residuals("s", rs);
        assert_eq!(rep.mean, 2.0);
        assert_eq!(rep.median, 2.0);
        assert!((rep.p95 - 3.8).abs() < 1e-12);
        let mut out = Vec::new();
        ResidualReport::write_csv_header(&mut out).unwrap();
        rep.write_csv_rows(&mut out, 7).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().nth(1).unwrap().starts_with("s,7,0,4.0000000000000000e0,"));
    }

    #[test]
    fn stochastic_env_rejected() {
        let env = LinearEnv::random(4, 2, 0.95, 0.1, 200, 0).unwrap();
        let err = residual(&TrainingBatch::default(), &env, "x").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
