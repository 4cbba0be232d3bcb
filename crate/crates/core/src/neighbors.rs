//! Exact k-nearest-neighbor search over Z-score standardized state-action
//! features.
//!
//! Distances are always evaluated the same way: both points are standardized
//! with the current moments and the squared differences are summed in
//! dimension order. Ties are broken by insertion order (older first), so every
//! search path returns the same slots in the same order.
//!
//! [`knn`] is the reference linear scan. [`NeighborIndex`] adds a kd-tree over
//! a snapshot of the raw features plus a scan over the inserts made since the
//! snapshot. Its pruning bounds are computed by standardizing the box corners
//! with the same arithmetic as the points, and since standardization and
//! subtraction are monotone in floating point the bound never exceeds the
//! true distance of any point inside the box. The tree therefore returns
//! exactly what the scan returns, for any moments.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::moments::{RunningMoments, Standardizer};
use crate::par;
use crate::storage::RingBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborQuery {
    pub query_slot: usize,
    pub k: usize,
    pub exclude_self: bool,
}

impl NeighborQuery {
    pub fn new(query_slot: usize, k: usize) -> Self {
        Self {
            query_slot,
            k,
            exclude_self: true,
        }
    }

    fn validate(&self, buf: &RingBuffer) -> Result<()> {
        if !buf.is_occupied(self.query_slot) {
            return Err(Error::invalid(format!(
                "query slot {} is not occupied",
                self.query_slot
            )));
        }
        if self.k == 0 {
            return Err(Error::param("k must be >= 1"));
        }
        let available = buf.len() - usize::from(self.exclude_self);
        if self.k > available {
            return Err(Error::InsufficientPopulation {
                needed: self.k + usize::from(self.exclude_self),
                available: buf.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist: f64,
    counter: u64,
    slot: usize,
}

impl Candidate {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.counter.cmp(&other.counter))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

/// Bounded max-heap holding the k best candidates seen so far.
struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn push(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(worst) = self.heap.peek() {
            if c < *worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    /// Distance a box must not exceed to possibly hold a better candidate.
    fn bound(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().map_or(f64::INFINITY, |c| c.dist)
        }
    }

    fn into_slots(self) -> Vec<usize> {
        self.heap.into_sorted_vec().into_iter().map(|c| c.slot).collect()
    }
}

fn select_k(mut cands: Vec<Candidate>, k: usize) -> Vec<usize> {
    if k < cands.len() {
        cands.select_nth_unstable_by(k, Candidate::key_cmp);
        cands.truncate(k);
    }
    cands.sort_unstable_by(Candidate::key_cmp);
    cands.into_iter().map(|c| c.slot).collect()
}

fn scan_candidate(
    buf: &RingBuffer,
    st: &Standardizer,
    zq: &[f64],
    q: &NeighborQuery,
    slot: usize,
) -> Option<Candidate> {
    if q.exclude_self && slot == q.query_slot {
        return None;
    }
    Some(Candidate {
        dist: st.sq_dist(zq, buf.features(slot)),
        counter: buf.insert_counter(slot),
        slot,
    })
}

/// Reference linear scan. Runs on the rayon pool with the `parallel` feature.
pub fn knn(buf: &RingBuffer, m: &RunningMoments, q: &NeighborQuery) -> Result<Vec<usize>> {
    let st = m.standardizer()?;
    knn_scan(buf, &st, q)
}

pub fn knn_scan(buf: &RingBuffer, st: &Standardizer, q: &NeighborQuery) -> Result<Vec<usize>> {
    q.validate(buf)?;
    let zq = st.apply(buf.features(q.query_slot));
    let cands: Vec<Candidate> = par::map_indices(buf.len(), |slot| {
        scan_candidate(buf, st, &zq, q, slot)
    })
    .into_iter()
    .flatten()
    .collect();
    Ok(select_k(cands, q.k))
}

/// Single-threaded linear scan, regardless of features.
pub fn knn_scan_sequential(
    buf: &RingBuffer,
    st: &Standardizer,
    q: &NeighborQuery,
) -> Result<Vec<usize>> {
    q.validate(buf)?;
    let zq = st.apply(buf.features(q.query_slot));
    let cands: Vec<Candidate> = (0..buf.len())
        .filter_map(|slot| scan_candidate(buf, st, &zq, q, slot))
        .collect();
    Ok(select_k(cands, q.k))
}

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
struct Node {
    start: usize,
    end: usize,
    /// Children as node indices; `None` for leaves.
    children: Option<(usize, usize)>,
}

/// Static kd-tree over a snapshot of stored state-action features.
#[derive(Debug, Clone)]
struct KdTree {
    dim: usize,
    /// Slot and insert counter of each indexed point, permuted by the build.
    slots: Vec<usize>,
    counters: Vec<u64>,
    /// Point coordinates in the permuted order, `dim` values per point.
    coords: Vec<f64>,
    nodes: Vec<Node>,
    /// Per-node bounding box: `dim` lows followed by `dim` highs.
    bounds: Vec<f64>,
    /// `total_inserts` of the buffer when the snapshot was taken.
    built_at: u64,
}

impl KdTree {
    fn build(buf: &RingBuffer) -> Self {
        let dim = buf.spec().feature_dim();
        let n = buf.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut tree = KdTree {
            dim,
            slots: Vec::with_capacity(n),
            counters: Vec::with_capacity(n),
            coords: Vec::with_capacity(n * dim),
            nodes: Vec::new(),
            bounds: Vec::new(),
            built_at: buf.total_inserts(),
        };
        if n > 0 {
            tree.build_node(buf, &mut order, 0, n);
        }
        for &slot in &order {
            tree.slots.push(slot);
            tree.counters.push(buf.insert_counter(slot));
            tree.coords.extend_from_slice(buf.features(slot));
        }
        tree
    }

    fn build_node(&mut self, buf: &RingBuffer, order: &mut [usize], start: usize, end: usize) -> usize {
        let dim = self.dim;
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &slot in &order[start..end] {
            for (j, &v) in buf.features(slot).iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            start,
            end,
            children: None,
        });
        self.bounds.extend_from_slice(&lo);
        self.bounds.extend_from_slice(&hi);

        if end - start <= LEAF_SIZE {
            return id;
        }
        // split on the widest raw dimension, relative to its overall spread
        let split_dim = (0..dim)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[split_dim] <= lo[split_dim] {
            return id;
        }
        let mid = start + (end - start) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            buf.features(a)[split_dim]
                .total_cmp(&buf.features(b)[split_dim])
                .then(a.cmp(&b))
        });
        let left = self.build_node(buf, order, start, mid);
        let right = self.build_node(buf, order, mid, end);
        self.nodes[id].children = Some((left, right));
        id
    }

    fn lower_bound(&self, node: usize, st: &Standardizer, zq: &[f64]) -> f64 {
        let base = node * 2 * self.dim;
        let lo = &self.bounds[base..base + self.dim];
        let hi = &self.bounds[base + self.dim..base + 2 * self.dim];
        let mut acc = 0.0;
        for j in 0..self.dim {
            let zl = st.z(j, lo[j]);
            let zh = st.z(j, hi[j]);
            let gap = if zq[j] < zl {
                zl - zq[j]
            } else if zq[j] > zh {
                zq[j] - zh
            } else {
                0.0
            };
            acc += gap * gap;
        }
        acc
    }

    fn search(
        &self,
        node: usize,
        lb: f64,
        buf: &RingBuffer,
        st: &Standardizer,
        zq: &[f64],
        q: &NeighborQuery,
        best: &mut TopK,
    ) {
        if lb > best.bound() {
            return;
        }
        let n = &self.nodes[node];
        match n.children {
            None => {
                for i in n.start..n.end {
                    let slot = self.slots[i];
                    let counter = self.counters[i];
                    if (q.exclude_self && slot == q.query_slot)
                        || !buf.is_occupied(slot)
                        || buf.insert_counter(slot) != counter
                    {
                        continue;
                    }
                    let x = &self.coords[i * self.dim..(i + 1) * self.dim];
                    best.push(Candidate {
                        dist: st.sq_dist(zq, x),
                        counter,
                        slot,
                    });
                }
            }
            Some((l, r)) => {
                let lb_l = self.lower_bound(l, st, zq);
                let lb_r = self.lower_bound(r, st, zq);
                if lb_l <= lb_r {
                    self.search(l, lb_l, buf, st, zq, q, best);
                    self.search(r, lb_r, buf, st, zq, q, best);
                } else {
                    self.search(r, lb_r, buf, st, zq, q, best);
                    self.search(l, lb_l, buf, st, zq, q, best);
                }
            }
        }
    }
}

pub const DEFAULT_REBUILD_AFTER: u64 = 256;
const MIN_TREE_POINTS: usize = 512;

/// Accelerated exact neighbor search that stays consistent with [`knn`].
///
/// Call [`NeighborIndex::refresh`] after inserts; queries remain exact even
/// when refresh is skipped, only slower.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    tree: Option<KdTree>,
    rebuild_after: u64,
}

impl Default for NeighborIndex {
    fn default() -> Self {
        Self::new()
    }
}

impl NeighborIndex {
    pub fn new() -> Self {
        Self::with_rebuild_after(DEFAULT_REBUILD_AFTER)
    }

    /// Rebuild the snapshot once this many inserts have accumulated since the
    /// last build.
    pub fn with_rebuild_after(rebuild_after: u64) -> Self {
        Self {
            tree: None,
            rebuild_after: rebuild_after.max(1),
        }
    }

    pub fn refresh(&mut self, buf: &RingBuffer) {
        if buf.len() < MIN_TREE_POINTS {
            self.tree = None;
            return;
        }
        let stale = match &self.tree {
            None => true,
            Some(t) => {
                buf.total_inserts() < t.built_at
                    || buf.total_inserts() - t.built_at >= self.rebuild_after
            }
        };
        if stale {
            self.tree = Some(KdTree::build(buf));
        }
    }

    pub fn rebuild(&mut self, buf: &RingBuffer) {
        self.tree = Some(KdTree::build(buf));
    }

    pub fn clear(&mut self) {
        self.tree = None;
    }

    pub fn knn(&self, buf: &RingBuffer, st: &Standardizer, q: &NeighborQuery) -> Result<Vec<usize>> {
        q.validate(buf)?;
        let tree = match &self.tree {
            Some(t) if t.built_at <= buf.total_inserts() && q.k * 4 <= buf.len() => t,
            _ => return knn_scan_sequential(buf, st, q),
        };
        let zq = st.apply(buf.features(q.query_slot));
        let mut best = TopK::new(q.k);
        if !tree.nodes.is_empty() {
            let lb = tree.lower_bound(0, st, &zq);
            tree.search(0, lb, buf, st, &zq, q, &mut best);
        }
        let first_live = buf.total_inserts() - buf.len() as u64;
        for counter in tree.built_at.max(first_live)..buf.total_inserts() {
            if let Some(slot) = buf.slot_of_insert(counter) {
                if let Some(c) = scan_candidate(buf, st, &zq, q, slot) {
                    best.push(c);
                }
            }
        }
        Ok(best.into_slots())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transition::{SpaceSpec, Transition};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_buffer(states: &[f64]) -> (RingBuffer, RunningMoments) {
        let spec = SpaceSpec::symmetric(1, 1, 1.0).unwrap();
        let mut buf = RingBuffer::new(spec, 64).unwrap();
        let mut m = RunningMoments::new(2);
        for (i, &s) in states.iter().enumerate() {
            let t = Transition {
                s: vec![s],
                a: vec![0.0],
                r: 0.0,
                s2: vec![s],
                done: false,
                episode_id: 0,
                step_idx: i as u64,
            };
            buf.insert(&t).unwrap();
            m.update(&[s, 0.0]).unwrap();
        }
        (buf, m)
    }

    #[test]
    fn three_points_on_a_line() {
        let (buf, m) = line_buffer(&[0.0, 1.0, 10.0]);
        let got = knn(&buf, &m, &NeighborQuery::new(1, 1)).unwrap();
        assert_eq!(got, vec![0]);
    }

    #[test]
    fn exhaustive_k_returns_all_others_sorted() {
        let (buf, m) = line_buffer(&[0.0, 1.0, 10.0, 4.0]);
        let got = knn(&buf, &m, &NeighborQuery::new(1, 3)).unwrap();
        assert_eq!(got, vec![0, 3, 2]);
    }

    #[test]
    fn ties_break_by_insert_order() {
        let (buf, m) = line_buffer(&[2.0, 0.0, 4.0, 2.0]);
        // slots 1 and 2 are equidistant from slot 0; slot 3 duplicates slot 0
        let got = knn(&buf, &m, &NeighborQuery::new(0, 3)).unwrap();
        assert_eq!(got, vec![3, 1, 2]);
        let with_self = knn(
            &buf,
            &m,
            &NeighborQuery {
                query_slot: 0,
                k: 2,
                exclude_self: false,
            },
        )
        .unwrap();
        assert_eq!(with_self, vec![0, 3]);
    }

    #[test]
    fn population_errors() {
        let (buf, m) = line_buffer(&[0.0, 1.0, 2.0]);
        assert!(matches!(
            knn(&buf, &m, &NeighborQuery::new(0, 3)),
            Err(Error::InsufficientPopulation { .. })
        ));
        assert!(knn(&buf, &m, &NeighborQuery::new(0, 0)).is_err());
        assert!(knn(&buf, &m, &NeighborQuery::new(5, 1)).is_err());
        let fresh = RunningMoments::new(2);
        assert!(matches!(
            knn(&buf, &fresh, &NeighborQuery::new(0, 1)),
            Err(Error::UninitializedMoments)
        ));
    }

    fn random_buffer(rng: &mut ChaCha8Rng, n: usize, cap: usize, ds: usize, da: usize) -> (RingBuffer, RunningMoments) {
        let spec = SpaceSpec::symmetric(ds, da, 1.0).unwrap();
        let mut buf = RingBuffer::new(spec, cap).unwrap();
        for i in 0..n {
            // quantized values force plenty of exact ties
            let s: Vec<f64> = (0..ds).map(|_| (rng.random_range(0..6) as f64) * 0.5).collect();
            let a: Vec<f64> = (0..da).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = Transition {
                s2: s.clone(),
                s,
                a,
                r: 0.0,
                done: false,
                episode_id: 0,
                step_idx: i as u64,
            };
            buf.insert(&t).unwrap();
        }
        let mut m = RunningMoments::new(ds + da);
        m.recompute_full(&buf).unwrap();
        (buf, m)
    }

    #[test]
    fn index_matches_scan_under_wraparound() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (mut buf, m) = random_buffer(&mut rng, 3000, 1500, 3, 1);
        let mut index = NeighborIndex::with_rebuild_after(300);
        index.rebuild(&buf);
        for round in 0..5 {
            for i in 0..97 {
                let t = Transition {
                    s: vec![rng.random(), rng.random(), 1.0],
                    a: vec![rng.random()],
                    r: 0.0,
                    s2: vec![0.0; 3],
                    done: false,
                    episode_id: 1 + round,
                    step_idx: i,
                };
                buf.insert(&t).unwrap();
            }
            index.refresh(&buf);
            let st = m.standardizer().unwrap();
            for _ in 0..50 {
                let slot = rng.random_range(0..buf.len());
                for k in [1, 5, 10, 100] {
                    let q = NeighborQuery::new(slot, k);
                    assert_eq!(
                        index.knn(&buf, &st, &q).unwrap(),
                        knn_scan_sequential(&buf, &st, &q).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn index_exact_with_degenerate_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = SpaceSpec::symmetric(2, 1, 1.0).unwrap();
        let mut buf = RingBuffer::new(spec, 2000).unwrap();
        for i in 0..2000 {
            let t = Transition {
                s: vec![3.0, rng.random()],
                a: vec![rng.random_range(-1.0..1.0)],
                r: 0.0,
                s2: vec![0.0, 0.0],
                done: false,
                episode_id: 0,
                step_idx: i,
            };
            buf.insert(&t).unwrap();
        }
        let mut m = RunningMoments::new(3);
        m.recompute_full(&buf).unwrap();
        let st = m.standardizer().unwrap();
        let mut index = NeighborIndex::new();
        index.rebuild(&buf);
        for slot in (0..2000).step_by(37) {
            let q = NeighborQuery::new(slot, 7);
            assert_eq!(
                index.knn(&buf, &st, &q).unwrap(),
                knn_scan_sequential(&buf, &st, &q).unwrap()
            );
        }
    }

    #[test]
    fn parallel_scan_equals_sequential_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (buf, m) = random_buffer(&mut rng, 700, 700, 4, 2);
        let st = m.standardizer().unwrap();
        for slot in [0, 13, 699] {
            let q = NeighborQuery::new(slot, 25);
            assert_eq!(knn_scan(&buf, &st, &q).unwrap(), knn_scan_sequential(&buf, &st, &q).unwrap());
        }
    }

    #[test]
    fn distance_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (buf, m) = random_buffer(&mut rng, 100, 100, 3, 2);
        let st = m.standardizer().unwrap();
        for _ in 0..200 {
            let i = rng.random_range(0..100);
            let j = rng.random_range(0..100);
            let zi = st.apply(buf.features(i));
            let zj = st.apply(buf.features(j));
            let dij = st.sq_dist(&zi, buf.features(j)).sqrt();
            let dji = st.sq_dist(&zj, buf.features(i)).sqrt();
            assert!((dij - dji).abs() < 1e-12);
        }
    }
}
