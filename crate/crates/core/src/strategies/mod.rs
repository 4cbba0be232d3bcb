//! Replay strategies: each turns the stored transitions into a training batch.
//!
//! Every sampler draws a single batch seed from the caller's generator and
//! gives item `i` its own stream derived from that seed, so batches are
//! bit-identical whether items are built in parallel or in order.

mod batch;
mod config;
mod per;

pub use batch::TrainingBatch;
pub use config::{StrategyConfig, StrategyKind};
pub use per::{leaf_priority, sample_per_batch, update_per_priorities, SumTree};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::interpolation::{local_mixup_with, sample_lambda, InterpolationOutcome, Neighborhood};
use crate::moments::RunningMoments;
use crate::neighbors::NeighborIndex;
use crate::par;
use crate::storage::RingBuffer;
use crate::transition::FlatVector;

fn draw_lambda<R: Rng + ?Sized>(cfg: &StrategyConfig, rng: &mut R) -> f64 {
    match cfg.fixed_lambda {
        Some(l) => l,
        None => sample_lambda(&cfg.mixup, rng),
    }
}

/// Marks which items of an `n`-item batch are interpolated: exactly
/// `round(interp_fraction * n)` of them, chosen by `rng`.
fn interpolation_mask<R: Rng + ?Sized>(n: usize, fraction: f64, rng: &mut R) -> Vec<bool> {
    if fraction >= 1.0 {
        return vec![true; n];
    }
    let skip = n - ((fraction * n as f64).round() as usize).min(n);
    let mut mask = vec![true; n];
    if skip > 0 {
        for i in index::sample(rng, n, skip) {
            mask[i] = false;
        }
    }
    mask
}

fn build_batch<R, F>(n: usize, cfg: &StrategyConfig, rng: &mut R, item: F) -> Result<TrainingBatch>
where
    R: Rng + ?Sized,
    F: Fn(usize, bool, &mut rand_chacha::ChaCha8Rng) -> Result<InterpolationOutcome> + Sync + Send,
{
    let batch_seed: u64 = rng.random();
    let mask = interpolation_mask(n, cfg.interp_fraction, rng);
    let outcomes = par::try_map_indices(n, |i| {
        let mut r = par::item_rng(batch_seed, i as u64);
        item(i, mask[i], &mut r)
    })?;
    Ok(TrainingBatch::from_outcomes(outcomes))
}

/// Plain i.i.d. uniform replay.
pub fn sample_uniform_batch<R: Rng + ?Sized>(
    buf: &RingBuffer,
    n: usize,
    rng: &mut R,
) -> Result<TrainingBatch> {
    if buf.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let batch_seed: u64 = rng.random();
    let outcomes = par::try_map_indices(n, |i| {
        let mut r = par::item_rng(batch_seed, i as u64);
        let slot = buf.uniform_slot(&mut r)?;
        Ok::<_, Error>(InterpolationOutcome::passthrough(buf, slot, None))
    })?;
    Ok(TrainingBatch::from_outcomes(outcomes))
}

fn sample_neighborhood_batch<R: Rng + ?Sized>(
    buf: &RingBuffer,
    moments: &RunningMoments,
    index: &NeighborIndex,
    cfg: &StrategyConfig,
    hood: Neighborhood,
    n: usize,
    rng: &mut R,
) -> Result<TrainingBatch> {
    if buf.len() < hood.min_population() {
        return Err(Error::InsufficientPopulation {
            needed: hood.min_population(),
            available: buf.len(),
        });
    }
    let st = moments.standardizer()?;
    let params = cfg.mixup;
    build_batch(n, cfg, rng, |_, interpolate, r| {
        let slot = buf.uniform_slot(r)?;
        if !interpolate {
            return Ok(InterpolationOutcome::passthrough(buf, slot, None));
        }
        match cfg.fixed_lambda {
            None => local_mixup_with(buf, &st, index, slot, hood, &params, r),
            Some(lambda) => {
                if buf.done(slot) {
                    return Ok(InterpolationOutcome::passthrough(buf, slot, None));
                }
                let partner = crate::interpolation::pick_partner(buf, &st, index, slot, hood, r)?;
                if buf.done(partner) {
                    return Ok(InterpolationOutcome::passthrough(buf, slot, Some(partner)));
                }
                Ok(InterpolationOutcome::mixed(buf, slot, partner, lambda))
            }
        }
    })
}

/// Neighborhood Mixup: each uniformly sampled transition is mixed with one of
/// its `cfg.k` nearest neighbors in standardized state-action space.
pub fn sample_nmer_batch<R: Rng + ?Sized>(
    buf: &RingBuffer,
    moments: &RunningMoments,
    index: &NeighborIndex,
    cfg: &StrategyConfig,
    n: usize,
    rng: &mut R,
) -> Result<TrainingBatch> {
    if cfg.k == 0 {
        return Err(Error::param("k must be ≥ 1"));
    }
    let hood = Neighborhood::Nearest {
        k: cfg.k,
        exclude_self: cfg.exclude_self,
    };
    sample_neighborhood_batch(buf, moments, index, cfg, hood, n, rng)
}

/// The two neighborhood limits: one nearest neighbor (`knn1_mixup`) or every
/// other stored transition (`naive_mixup`).
pub fn sample_mixup_batch<R: Rng + ?Sized>(
    buf: &RingBuffer,
    moments: &RunningMoments,
    index: &NeighborIndex,
    cfg: &StrategyConfig,
    n: usize,
    rng: &mut R,
) -> Result<TrainingBatch> {
    let hood = match cfg.kind {
        StrategyKind::Knn1Mixup => Neighborhood::Nearest {
            k: 1,
            exclude_self: cfg.exclude_self,
        },
        StrategyKind::NaiveMixup => Neighborhood::All,
        other => {
            return Err(Error::param(format!(
                "sample_mixup_batch expects knn1_mixup or naive_mixup, got {other}"
            )))
        }
    };
    sample_neighborhood_batch(buf, moments, index, cfg, hood, n, rng)
}

/// Continuous Transition: mixes a sample with its temporal successor when both
/// are stored, belong to the same episode and neither is terminal.
pub fn sample_ct_batch<R: Rng + ?Sized>(
    buf: &RingBuffer,
    cfg: &StrategyConfig,
    n: usize,
    rng: &mut R,
) -> Result<TrainingBatch> {
    if buf.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    build_batch(n, cfg, rng, |_, interpolate, r| {
        let slot = buf.uniform_slot(r)?;
        if !interpolate || buf.done(slot) {
            return Ok(InterpolationOutcome::passthrough(buf, slot, None));
        }
        let Some(next) = buf.successor(slot)? else {
            return Ok(InterpolationOutcome::passthrough(buf, slot, None));
        };
        if buf.done(next) {
            return Ok(InterpolationOutcome::passthrough(buf, slot, Some(next)));
        }
        let lambda = draw_lambda(cfg, r);
        Ok(InterpolationOutcome::mixed(buf, slot, next, lambda))
    })
}

/// S4RL-style augmentation: the state is replaced by a mixture of itself and
/// the next state; action, reward, next state and termination are kept.
/// Terminal transitions pass through untouched.
pub fn sample_s4rl_batch<R: Rng + ?Sized>(
    buf: &RingBuffer,
    cfg: &StrategyConfig,
    n: usize,
    rng: &mut R,
) -> Result<TrainingBatch> {
    if buf.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let spec = buf.spec();
    let ds = spec.state_dim();
    let s2_start = spec.reward_index() + 1;
    build_batch(n, cfg, rng, |_, interpolate, r| {
        let slot = buf.uniform_slot(r)?;
        if !interpolate || buf.done(slot) {
            return Ok(InterpolationOutcome::passthrough(buf, slot, None));
        }
        let lambda = draw_lambda(cfg, r);
        let row = buf.flat(slot);
        let mixed_state =
            crate::interpolation::mixup_slices(&row[..ds], &row[s2_start..s2_start + ds], lambda)?;
        let mut out = row.to_vec();
        out[..ds].copy_from_slice(&mixed_state);
        Ok(InterpolationOutcome {
            flat: FlatVector::from_raw(out),
            lambda_used: crate::interpolation::effective_lambda(lambda),
            was_interpolated: true,
            sample_slot: slot,
            partner_slot: None,
            done: false,
        })
    })
}

/// Noisy replay: zero-mean Gaussian noise on every flat component with sd
/// `noise_sigma_scale * std_j`, where `std_j` comes from `flat_moments`
/// accumulated over whole flat rows.
pub fn sample_noisy_batch<R: Rng + ?Sized>(
    buf: &RingBuffer,
    flat_moments: &RunningMoments,
    cfg: &StrategyConfig,
    n: usize,
    rng: &mut R,
) -> Result<TrainingBatch> {
    if buf.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if flat_moments.count() == 0 {
        return Err(Error::UninitializedMoments);
    }
    crate::error::check_len("noise moments", buf.spec().flat_len(), flat_moments.dim())?;
    let sd: Vec<f64> = flat_moments
        .std()
        .into_iter()
        .map(|s| s * cfg.noise_sigma_scale)
        .collect();
    let batch_seed: u64 = rng.random();
    let outcomes = par::try_map_indices(n, |i| {
        let mut r = par::item_rng(batch_seed, i as u64);
        let slot = buf.uniform_slot(&mut r)?;
        let mut out = InterpolationOutcome::passthrough(buf, slot, None);
        if cfg.noise_sigma_scale > 0.0 {
            for (v, s) in out.flat.as_mut_slice().iter_mut().zip(&sd) {
                let z: f64 = StandardNormal.sample(&mut r);
                *v += z * s;
            }
        }
        Ok::<_, Error>(out)
    })?;
    Ok(TrainingBatch::from_outcomes(outcomes))
}
