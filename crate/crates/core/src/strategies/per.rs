//! Proportional prioritized replay.

use rand::Rng;

use super::batch::TrainingBatch;
use super::config::StrategyConfig;
use crate::error::{Error, Result};
use crate::interpolation::InterpolationOutcome;
use crate::par;
use crate::storage::RingBuffer;

/// Binary tree of partial priority sums over a fixed number of leaves.
///
/// Internal nodes are always recomputed as `left + right`, never patched by
/// deltas, so they equal the sum of their children exactly.
#[derive(Debug, Clone)]
pub struct SumTree {
    capacity: usize,
    leaves: usize,
    nodes: Vec<f64>,
    max_priority: f64,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "sum tree needs at least one leaf");
        let leaves = capacity.next_power_of_two();
        Self {
            capacity,
            leaves,
            nodes: vec![0.0; 2 * leaves],
            max_priority: 1.0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    /// Largest leaf priority assigned so far (starts at 1).
    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, priority: f64) {
        assert!(i < self.capacity, "leaf {i} out of range");
        assert!(priority >= 0.0 && priority.is_finite(), "bad priority {priority}");
        let mut node = self.leaves + i;
        self.nodes[node] = priority;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
        self.max_priority = self.max_priority.max(priority);
    }

    /// Gives a freshly inserted leaf the largest priority seen so far.
    pub fn set_max(&mut self, i: usize) {
        self.set(i, self.max_priority);
    }

    /// Leaf whose cumulative-priority interval contains `mass`.
    ///
    /// Never returns a zero-priority leaf while the total is positive.
    pub fn find_prefix(&self, mut mass: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = 2 * node;
            let right = left + 1;
            node = if (mass < self.nodes[left] && self.nodes[left] > 0.0) || self.nodes[right] <= 0.0 {
                left
            } else {
                mass -= self.nodes[left];
                right
            };
        }
        node - self.leaves
    }

    pub fn nodes_consistent(&self) -> bool {
        (1..self.leaves).all(|n| self.nodes[n] == self.nodes[2 * n] + self.nodes[2 * n + 1])
    }
}

pub fn leaf_priority(td_error: f64, cfg: &StrategyConfig) -> f64 {
    (td_error.abs() + cfg.per_epsilon).powf(cfg.per_alpha)
}

pub fn update_per_priorities(
    tree: &mut SumTree,
    buf: &RingBuffer,
    slots: &[usize],
    td_errors: &[f64],
    cfg: &StrategyConfig,
) -> Result<()> {
    crate::error::check_len("td errors", slots.len(), td_errors.len())?;
    for (&slot, &td) in slots.iter().zip(td_errors) {
        if !buf.is_occupied(slot) || slot >= tree.capacity() {
            return Err(Error::invalid(format!("slot {slot} is not occupied")));
        }
        if !td.is_finite() {
            return Err(Error::invalid(format!("non-finite td error for slot {slot}")));
        }
        tree.set(slot, leaf_priority(td, cfg));
    }
    Ok(())
}

/// Draws `n` slots proportionally to their priority and attaches importance
/// weights `(count * P(i))^-beta`, normalized by the largest weight in the batch.
pub fn sample_per_batch<R: Rng + ?Sized>(
    buf: &RingBuffer,
    tree: &SumTree,
    cfg: &StrategyConfig,
    n: usize,
    global_step: u64,
    rng: &mut R,
) -> Result<TrainingBatch> {
    if buf.is_empty() || tree.total() <= 0.0 {
        return Err(Error::EmptyBuffer);
    }
    let total = tree.total();
    let batch_seed: u64 = rng.random();
    let slots: Vec<usize> = par::map_indices(n, |i| {
        let mut r = par::item_rng(batch_seed, i as u64);
        tree.find_prefix(r.random::<f64>() * total)
    });
    let beta = cfg.per_beta(global_step);
    let count = buf.len() as f64;
    let raw: Vec<f64> = slots
        .iter()
        .map(|&s| (count * (tree.get(s) / total)).powf(-beta))
        .collect();
    let max_w = raw.iter().copied().fold(0.0, f64::max);
    let mut batch = TrainingBatch::with_capacity(n);
    for (&slot, w) in slots.iter().zip(raw) {
        debug_assert!(buf.is_occupied(slot));
        batch.push(InterpolationOutcome::passthrough(buf, slot, None), w / max_w);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn root_tracks_leaf_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tree = SumTree::new(37);
        let mut leaves = vec![0.0; 37];
        for _ in 0..20_000 {
            let i = rng.random_range(0..37);
            let p = rng.random::<f64>() * 10.0;
            tree.set(i, p);
            leaves[i] = p;
        }
        let direct: f64 = leaves.iter().sum();
        assert!((tree.total() - direct).abs() < 1e-9);
        assert!(tree.nodes_consistent());
    }

    #[test]
    fn fresh_leaf_gets_priority_one() {
        let mut tree = SumTree::new(4);
        tree.set_max(0);
        assert_eq!(tree.get(0), 1.0);
        tree.set(1, 3.5);
        tree.set_max(2);
        assert_eq!(tree.get(2), 3.5);
    }

    #[test]
    fn zero_td_error_keeps_positive_priority() {
        let cfg = StrategyConfig::default();
        let p = leaf_priority(0.0, &cfg);
        assert_eq!(p, 1e-6f64.powf(0.6));
        assert!(p > 0.0);
    }

    #[test]
    fn find_prefix_skips_zero_leaves() {
        let mut tree = SumTree::new(8);
        tree.set(3, 2.0);
        tree.set(6, 1.0);
        for mass in [0.0, 0.5, 1.999, 2.0, 2.5, 3.0, 3.5] {
            let leaf = tree.find_prefix(mass);
            assert!(leaf == 3 || leaf == 6, "mass {mass} -> {leaf}");
        }
        assert_eq!(tree.find_prefix(1.0), 3);
        assert_eq!(tree.find_prefix(2.5), 6);
    }
}
