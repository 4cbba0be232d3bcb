//! Mixup coefficients and convex interpolation of transition pairs.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{check_len, Error, Result};
use crate::moments::{RunningMoments, Standardizer};
use crate::neighbors::{NeighborIndex, NeighborQuery};
use crate::storage::RingBuffer;
use crate::transition::FlatVector;

/// Shape of the symmetric Beta(alpha, alpha) law the mixing weight is drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixupParams {
    alpha: f64,
}

impl Default for MixupParams {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

impl MixupParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::param(format!("mixup alpha must be > 0, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn beta(&self) -> Beta<f64> {
        Beta::new(self.alpha, self.alpha).expect("alpha validated at construction")
    }
}

pub fn sample_lambda<R: Rng + ?Sized>(p: &MixupParams, rng: &mut R) -> f64 {
    p.beta().sample(rng).clamp(0.0, 1.0)
}

/// Weights `(w1, w2)` with `w1 + w2 == 1` exactly and `w1` within one ulp of
/// `lambda`. Swapping the arguments and passing `1 - lambda` yields the
/// swapped pair, which makes [`mixup`] exactly symmetric.
fn weights(lambda: f64) -> (f64, f64) {
    if lambda >= 0.5 {
        // 1 - lambda is exact on [0.5, 1]
        (lambda, 1.0 - lambda)
    } else {
        let w2 = 1.0 - lambda;
        (1.0 - w2, w2)
    }
}

/// The weight actually applied to the first argument of [`mixup`].
pub fn effective_lambda(lambda: f64) -> f64 {
    weights(lambda).0
}

fn mix_into(out: &mut [f64], x1: &[f64], x2: &[f64], lambda: f64) {
    let (w1, w2) = weights(lambda);
    for ((o, &a), &b) in out.iter_mut().zip(x1).zip(x2) {
        // clamping keeps every component inside the segment despite rounding
        *o = (w1 * a + w2 * b).clamp(a.min(b), a.max(b));
    }
}

/// Elementwise `lambda * x1 + (1 - lambda) * x2`.
pub fn mixup(x1: &FlatVector, x2: &FlatVector, lambda: f64) -> Result<FlatVector> {
    Ok(FlatVector::from_raw(mixup_slices(
        x1.as_slice(),
        x2.as_slice(),
        lambda,
    )?))
}

pub fn mixup_slices(x1: &[f64], x2: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_len("mixup operand", x1.len(), x2.len())?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::param(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let mut out = vec![0.0; x1.len()];
    mix_into(&mut out, x1, x2, lambda);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationOutcome {
    pub flat: FlatVector,
    /// 1 for pass-through items.
    pub lambda_used: f64,
    pub was_interpolated: bool,
    pub sample_slot: usize,
    pub partner_slot: Option<usize>,
    pub done: bool,
}

impl InterpolationOutcome {
    pub fn passthrough(buf: &RingBuffer, slot: usize, partner: Option<usize>) -> Self {
        Self {
            flat: FlatVector::from_raw(buf.flat(slot).to_vec()),
            lambda_used: 1.0,
            was_interpolated: false,
            sample_slot: slot,
            partner_slot: partner,
            done: buf.done(slot),
        }
    }

    /// Mixes two stored rows. Callers guarantee neither is terminal.
    pub fn mixed(buf: &RingBuffer, slot: usize, partner: usize, lambda: f64) -> Self {
        let x1 = buf.flat(slot);
        let mut out = vec![0.0; x1.len()];
        mix_into(&mut out, x1, buf.flat(partner), lambda);
        Self {
            flat: FlatVector::from_raw(out),
            lambda_used: effective_lambda(lambda),
            was_interpolated: true,
            sample_slot: slot,
            partner_slot: Some(partner),
            done: false,
        }
    }
}

/// Which stored transitions a sampled transition may be mixed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighborhood {
    /// The `k` nearest in standardized state-action space.
    Nearest { k: usize, exclude_self: bool },
    /// Every other stored transition (naive Mixup).
    All,
}

impl Neighborhood {
    pub fn min_population(&self) -> usize {
        match *self {
            Neighborhood::Nearest { k, exclude_self } => k + usize::from(exclude_self),
            Neighborhood::All => 2,
        }
    }
}

/// Picks one partner for `sample_slot` uniformly from its neighborhood.
pub fn pick_partner<R: Rng + ?Sized>(
    buf: &RingBuffer,
    st: &Standardizer,
    index: &NeighborIndex,
    sample_slot: usize,
    hood: Neighborhood,
    rng: &mut R,
) -> Result<usize> {
    let available = buf.len();
    if available < hood.min_population() {
        return Err(Error::InsufficientPopulation {
            needed: hood.min_population(),
            available,
        });
    }
    match hood {
        Neighborhood::Nearest { k, exclude_self } => {
            let q = NeighborQuery {
                query_slot: sample_slot,
                k,
                exclude_self,
            };
            let hood = index.knn(buf, st, &q)?;
            Ok(hood[rng.random_range(0..hood.len())])
        }
        Neighborhood::All => {
            let other = rng.random_range(0..available - 1);
            Ok(if other >= sample_slot { other + 1 } else { other })
        }
    }
}

/// Mixes the sampled transition with one partner from its neighborhood.
///
/// Terminal transitions are never mixed: if either endpoint has `done` set the
/// sampled transition is returned unchanged.
pub fn local_mixup_with<R: Rng + ?Sized>(
    buf: &RingBuffer,
    st: &Standardizer,
    index: &NeighborIndex,
    sample_slot: usize,
    hood: Neighborhood,
    params: &MixupParams,
    rng: &mut R,
) -> Result<InterpolationOutcome> {
    if !buf.is_occupied(sample_slot) {
        return Err(Error::invalid(format!("slot {sample_slot} is not occupied")));
    }
    if buf.len() < hood.min_population() {
        return Err(Error::InsufficientPopulation {
            needed: hood.min_population(),
            available: buf.len(),
        });
    }
    if buf.done(sample_slot) {
        return Ok(InterpolationOutcome::passthrough(buf, sample_slot, None));
    }
    let partner = pick_partner(buf, st, index, sample_slot, hood, rng)?;
    if buf.done(partner) {
        return Ok(InterpolationOutcome::passthrough(buf, sample_slot, Some(partner)));
    }
    let lambda = sample_lambda(params, rng);
    Ok(InterpolationOutcome::mixed(buf, sample_slot, partner, lambda))
}

/// [`local_mixup_with`] over the `k` nearest neighbors, excluding the sample itself.
pub fn local_mixup<R: Rng + ?Sized>(
    buf: &RingBuffer,
    moments: &RunningMoments,
    index: &NeighborIndex,
    sample_slot: usize,
    k: usize,
    params: &MixupParams,
    rng: &mut R,
) -> Result<InterpolationOutcome> {
    if k == 0 {
        return Err(Error::param("k must be >= 1"));
    }
    let st = moments.standardizer()?;
    local_mixup_with(
        buf,
        &st,
        index,
        sample_slot,
        Neighborhood::Nearest {
            k,
            exclude_self: true,
        },
        params,
        rng,
    )
}
