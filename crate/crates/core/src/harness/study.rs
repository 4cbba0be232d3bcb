//! Offline manifold studies: fill a buffer with a fixed behavior policy, then
//! measure how far a strategy's synthetic samples drift from the dynamics.

use rand::{Rng, RngCore};

use crate::envs::Env;
use crate::error::{Error, Result};
use crate::manifold::{flat_residual, Residual, ResidualReport};
use crate::par::item_rng;
use crate::replay::ReplayMemory;
use crate::storage::RingBuffer;
use crate::strategies::StrategyConfig;
use crate::transition::Transition;

/// `n` transitions from uniformly random actions, episodes cut at the horizon
/// (never marked terminal).
pub fn collect_random(env: &dyn Env, n: usize, seed: u64) -> Result<Vec<Transition>> {
    let spec = env.spec().clone();
    let mut rng = item_rng(seed, 0);
    let mut out = Vec::with_capacity(n);
    let mut s = env.reset(&mut rng);
    let (mut episode_id, mut step_idx) = (0u64, 0u64);
    for _ in 0..n {
        let a: Vec<f64> = spec
            .action_low()
            .iter()
            .zip(spec.action_high())
            .map(|(&l, &h)| rng.random_range(l..h))
            .collect();
        let step = env.step(&s, &a, &mut rng as &mut dyn RngCore)?;
        out.push(Transition {
            s: s.clone(),
            a,
            r: step.reward,
            s2: step.next_state.clone(),
            done: step.done,
            episode_id,
            step_idx,
        });
        step_idx += 1;
        if step.done || step_idx >= env.horizon() {
            episode_id += 1;
            step_idx = 0;
            s = env.reset(&mut rng);
        } else {
            s = step.next_state;
        }
    }
    Ok(out)
}

pub fn memory_from_transitions(env: &dyn Env, cfg: StrategyConfig, transitions: &[Transition]) -> Result<ReplayMemory> {
    let mut memory = ReplayMemory::new(env.spec().clone(), transitions.len().max(1), cfg)?;
    for t in transitions {
        memory.insert(t)?;
    }
    Ok(memory)
}

/// Replays a dumped buffer, in original insert order, into a fresh memory.
pub fn memory_from_buffer(buf: &RingBuffer, cfg: StrategyConfig) -> Result<ReplayMemory> {
    let mut memory = ReplayMemory::new(buf.spec().clone(), buf.capacity().max(1), cfg)?;
    for slot in buf.slots_in_insert_order() {
        memory.insert(&buf.get(slot)?)?;
    }
    Ok(memory)
}

/// Residuals of the first `interpolations` synthetic items the memory's
/// strategy produces, sampling batches of `batch_size`.
pub fn residual_study(
    memory: &ReplayMemory,
    env: &dyn Env,
    label: &str,
    interpolations: usize,
    batch_size: usize,
    seed: u64,
) -> Result<ResidualReport> {
    if !env.is_deterministic() {
        return Err(Error::config("residuals need a noise-free environment"));
    }
    if batch_size == 0 {
        return Err(Error::param("batch_size must be ≥ 1"));
    }
    let mut rng = item_rng(seed, 1);
    let mut residuals: Vec<Residual> = Vec::with_capacity(interpolations);
    let mut empty_batches = 0;
    while residuals.len() < interpolations {
        let batch = memory.sample(batch_size, 0, &mut rng)?;
        let before = residuals.len();
        for (flat, _) in batch.flats.iter().zip(&batch.interpolated).filter(|(_, i)| **i) {
            if residuals.len() == interpolations {
                break;
            }
            residuals.push(flat_residual(env, flat)?);
        }
        if residuals.len() == before {
            empty_batches += 1;
            if empty_batches >= 100 {
                return Err(Error::invalid(format!(
                    "strategy `{label}` produced no interpolated samples in 100 batches"
                )));
            }
        }
    }
    Ok(ResidualReport::from_residuals(label, residuals))
}
