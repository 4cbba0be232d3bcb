//! A replay buffer bundled with the state its strategy needs: standardization
//! moments, the neighbor index and, for prioritized replay, the sum tree.

use rand::Rng;

use crate::error::Result;
use crate::moments::RunningMoments;
use crate::neighbors::NeighborIndex;
use crate::storage::RingBuffer;
use crate::strategies::{
    sample_ct_batch, sample_mixup_batch, sample_nmer_batch, sample_noisy_batch, sample_per_batch,
    sample_s4rl_batch, sample_uniform_batch, update_per_priorities, StrategyConfig, StrategyKind,
    SumTree, TrainingBatch,
};
use crate::transition::{FlatVector, SpaceSpec, Transition};

/// Once the buffer is full, moments are recomputed exactly after this many
/// further inserts to flush the contribution of evicted transitions.
pub const RECOMPUTE_INTERVAL: u64 = 10_000;

#[derive(Debug, Clone)]
pub struct ReplayMemory {
    buffer: RingBuffer,
    cfg: StrategyConfig,
    /// Moments of the state-action prefix; drives neighbor search.
    features: RunningMoments,
    /// Moments of whole flat rows; drives the noisy baseline.
    flat: RunningMoments,
    index: NeighborIndex,
    tree: Option<SumTree>,
    evictions_since_recompute: u64,
}

impl ReplayMemory {
    pub fn new(spec: SpaceSpec, capacity: usize, cfg: StrategyConfig) -> Result<Self> {
        cfg.validate()?;
        let features = RunningMoments::new(spec.feature_dim());
        let flat = RunningMoments::new(spec.flat_len());
        let tree = (cfg.kind == StrategyKind::Per).then(|| SumTree::new(capacity));
        Ok(Self {
            buffer: RingBuffer::new(spec, capacity)?,
            cfg,
            features,
            flat,
            index: NeighborIndex::new(),
            tree,
            evictions_since_recompute: 0,
        })
    }

    pub fn buffer(&self) -> &RingBuffer {
        &self.buffer
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.cfg
    }

    pub fn feature_moments(&self) -> &RunningMoments {
        &self.features
    }

    pub fn flat_moments(&self) -> &RunningMoments {
        &self.flat
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    pub fn sum_tree(&self) -> Option<&SumTree> {
        self.tree.as_ref()
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn insert(&mut self, t: &Transition) -> Result<usize> {
        let was_full = self.buffer.is_full();
        let slot = self.buffer.insert(t)?;
        self.after_insert(slot, was_full)?;
        Ok(slot)
    }

    pub fn insert_flat(&mut self, flat: &FlatVector, done: bool, episode_id: u64, step_idx: u64) -> Result<usize> {
        let was_full = self.buffer.is_full();
        let slot = self.buffer.insert_flat(flat, done, episode_id, step_idx)?;
        self.after_insert(slot, was_full)?;
        Ok(slot)
    }

    fn after_insert(&mut self, slot: usize, was_full: bool) -> Result<()> {
        let row = self.buffer.flat(slot);
        self.features.update(&row[..self.features.dim()])?;
        self.flat.update(row)?;
        if was_full {
            self.evictions_since_recompute += 1;
            if self.evictions_since_recompute >= RECOMPUTE_INTERVAL {
                self.features.recompute_full(&self.buffer)?;
                self.flat.recompute_full(&self.buffer)?;
                self.evictions_since_recompute = 0;
            }
        }
        if let Some(tree) = &mut self.tree {
            tree.set_max(slot);
        }
        if self.cfg.kind.uses_neighbor_index() {
            self.index.refresh(&self.buffer);
        }
        Ok(())
    }

    /// Samples a training batch with the configured strategy. `global_step`
    /// is the number of gradient steps taken so far (for PER annealing).
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, global_step: u64, rng: &mut R) -> Result<TrainingBatch> {
        let buf = &self.buffer;
        match self.cfg.kind {
            StrategyKind::Uniform => sample_uniform_batch(buf, n, rng),
            StrategyKind::Per => {
                let tree = self.tree.as_ref().expect("prioritized memory owns a sum tree");
                sample_per_batch(buf, tree, &self.cfg, n, global_step, rng)
            }
            StrategyKind::Ct => sample_ct_batch(buf, &self.cfg, n, rng),
            StrategyKind::Nmer => sample_nmer_batch(buf, &self.features, &self.index, &self.cfg, n, rng),
            StrategyKind::Knn1Mixup | StrategyKind::NaiveMixup => {
                sample_mixup_batch(buf, &self.features, &self.index, &self.cfg, n, rng)
            }
            StrategyKind::S4rl => sample_s4rl_batch(buf, &self.cfg, n, rng),
            StrategyKind::Noisy => sample_noisy_batch(buf, &self.flat, &self.cfg, n, rng),
        }
    }

    /// Feeds TD errors back to prioritized replay; a no-op for other strategies.
    pub fn update_priorities(&mut self, slots: &[usize], td_errors: &[f64]) -> Result<()> {
        match &mut self.tree {
            Some(tree) => update_per_priorities(tree, &self.buffer, slots, td_errors, &self.cfg),
            None => Ok(()),
        }
    }
}
