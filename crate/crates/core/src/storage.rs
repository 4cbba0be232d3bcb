//! Fixed-capacity FIFO transition store.
//!
//! Transitions are kept as contiguous flat rows (`[s | a | r | s2]`) so the
//! neighbor search can scan the state-action prefix of every slot without
//! chasing pointers. The `i`-th insert always lands in slot `i % capacity`.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::transition::{decode, encode, FlatVector, SpaceSpec, Transition};

/// Default capacity of a full-size run.
pub const DEFAULT_CAPACITY: usize = 1_000_000;

const DUMP_MAGIC: &str = "nmer-buffer";

#[derive(Debug, Clone)]
pub struct RingBuffer {
    spec: SpaceSpec,
    capacity: usize,
    flat_len: usize,
    data: Vec<f64>,
    done: Vec<bool>,
    episode_id: Vec<u64>,
    step_idx: Vec<u64>,
    insert_counter: Vec<u64>,
    count: usize,
    total_inserts: u64,
    by_step: HashMap<(u64, u64), usize>,
}

impl RingBuffer {
    pub fn new(spec: SpaceSpec, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::param("buffer capacity must be >= 1"));
        }
        let flat_len = spec.flat_len();
        Ok(Self {
            spec,
            capacity,
            flat_len,
            data: Vec::new(),
            done: Vec::new(),
            episode_id: Vec::new(),
            step_idx: Vec::new(),
            insert_counter: Vec::new(),
            count: 0,
            total_inserts: 0,
            by_step: HashMap::new(),
        })
    }

    pub fn spec(&self) -> &SpaceSpec {
        &self.spec
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn is_full(&self) -> bool {
        self.count == self.capacity
    }

    /// Number of inserts since construction, evicted ones included.
    pub fn total_inserts(&self) -> u64 {
        self.total_inserts
    }

    pub fn insert(&mut self, t: &Transition) -> Result<usize> {
        let flat = encode(t, &self.spec)?;
        Ok(self.insert_flat_unchecked(flat.as_slice(), t.done, t.episode_id, t.step_idx))
    }

    /// Inserts an already-encoded row. The row must have the spec's flat length
    /// and contain only finite values.
    pub fn insert_flat(
        &mut self,
        flat: &FlatVector,
        done: bool,
        episode_id: u64,
        step_idx: u64,
    ) -> Result<usize> {
        crate::error::check_len("flat vector", self.flat_len, flat.len())?;
        if !flat.as_slice().iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("transition contains non-finite values"));
        }
        Ok(self.insert_flat_unchecked(flat.as_slice(), done, episode_id, step_idx))
    }

    fn insert_flat_unchecked(&mut self, row: &[f64], done: bool, ep: u64, step: u64) -> usize {
        let slot = (self.total_inserts % self.capacity as u64) as usize;
        if slot < self.count {
            let old = (self.episode_id[slot], self.step_idx[slot]);
            if self.by_step.get(&old) == Some(&slot) {
                self.by_step.remove(&old);
            }
            let range = slot * self.flat_len..(slot + 1) * self.flat_len;
            self.data[range].copy_from_slice(row);
            self.done[slot] = done;
            self.episode_id[slot] = ep;
            self.step_idx[slot] = step;
            self.insert_counter[slot] = self.total_inserts;
        } else {
            self.data.extend_from_slice(row);
            self.done.push(done);
            self.episode_id.push(ep);
            self.step_idx.push(step);
            self.insert_counter.push(self.total_inserts);
            self.count += 1;
        }
        self.by_step.insert((ep, step), slot);
        self.total_inserts += 1;
        slot
    }

    pub fn is_occupied(&self, slot: usize) -> bool {
        slot < self.count
    }

    fn check_slot(&self, slot: usize) -> Result<()> {
        if self.is_occupied(slot) {
            Ok(())
        } else {
            Err(Error::invalid(format!("slot {slot} is not occupied")))
        }
    }

    /// Flat `[s | a | r | s2]` row of an occupied slot.
    ///
    /// Panics if the slot is not occupied.
    pub fn flat(&self, slot: usize) -> &[f64] {
        assert!(self.is_occupied(slot), "slot {slot} is not occupied");
        &self.data[slot * self.flat_len..(slot + 1) * self.flat_len]
    }

    /// State-action prefix of an occupied slot.
    pub fn features(&self, slot: usize) -> &[f64] {
        &self.flat(slot)[..self.spec.feature_dim()]
    }

    pub fn done(&self, slot: usize) -> bool {
        self.done[slot]
    }

    pub fn episode_id(&self, slot: usize) -> u64 {
        self.episode_id[slot]
    }

    pub fn step_idx(&self, slot: usize) -> u64 {
        self.step_idx[slot]
    }

    pub fn insert_counter(&self, slot: usize) -> u64 {
        self.insert_counter[slot]
    }

    pub fn get(&self, slot: usize) -> Result<Transition> {
        self.check_slot(slot)?;
        decode(
            &FlatVector::from_raw(self.flat(slot).to_vec()),
            self.done[slot],
            self.episode_id[slot],
            self.step_idx[slot],
            &self.spec,
        )
    }

    /// Slot that currently holds the given insert number, if it is still stored.
    pub fn slot_of_insert(&self, counter: u64) -> Option<usize> {
        if counter >= self.total_inserts || counter + (self.count as u64) < self.total_inserts {
            return None;
        }
        Some((counter % self.capacity as u64) as usize)
    }

    /// Occupied slots from oldest to newest insert.
    pub fn slots_in_insert_order(&self) -> impl Iterator<Item = usize> + '_ {
        let first = self.total_inserts - self.count as u64;
        (first..self.total_inserts).map(move |c| (c % self.capacity as u64) as usize)
    }

    /// One slot drawn uniformly over the occupied slots.
    pub fn uniform_slot<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        if self.count == 0 {
            return Err(Error::EmptyBuffer);
        }
        Ok(rng.random_range(0..self.count))
    }

    /// `n` slots drawn i.i.d. uniformly, with replacement.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.count == 0 {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..n).map(|_| rng.random_range(0..self.count)).collect())
    }

    /// Slot holding the next step of the same episode, if it is still stored.
    pub fn successor(&self, slot: usize) -> Result<Option<usize>> {
        self.check_slot(slot)?;
        let key = (self.episode_id[slot], self.step_idx[slot] + 1);
        Ok(self.by_step.get(&key).copied().filter(|&s| {
            self.is_occupied(s)
                && self.episode_id[s] == key.0
                && self.step_idx[s] == key.1
        }))
    }

    /// Writes the buffer contents, oldest first, as a line-delimited record file.
    ///
    /// The header line is `nmer-buffer state_dim=<ds> action_dim=<da>`; each
    /// following line holds the flat row, then `done` (0/1), `episode_id` and
    /// `step_idx`, comma separated. Floats use 17 significant digits.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{DUMP_MAGIC} state_dim={} action_dim={}",
            self.spec.state_dim(),
            self.spec.action_dim()
        )?;
        let mut line = String::new();
        for slot in self.slots_in_insert_order() {
            line.clear();
            for v in self.flat(slot) {
                line.push_str(&format!("{v:.16e},"));
            }
            line.push_str(&format!(
                "{},{},{}",
                u8::from(self.done[slot]),
                self.episode_id[slot],
                self.step_idx[slot]
            ));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads the header of a dump and returns `(state_dim, action_dim)`.
    pub fn parse_dump_header(line: &str) -> Result<(usize, usize)> {
        let mut parts = line.split_whitespace();
        if parts.next() != Some(DUMP_MAGIC) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header starting with `{DUMP_MAGIC}`"),
            });
        }
        let mut ds = None;
        let mut da = None;
        for part in parts {
            let (key, value) = part.split_once('=').ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("malformed header field `{part}`"),
            })?;
            let value: usize = value.parse().map_err(|_| Error::Parse {
                line: 1,
                message: format!("bad integer in `{part}`"),
            })?;
            match key {
                "state_dim" => ds = Some(value),
                "action_dim" => da = Some(value),
                _ => {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!("unknown header field `{key}`"),
                    })
                }
            }
        }
        match (ds, da) {
            (Some(ds), Some(da)) => Ok((ds, da)),
            _ => Err(Error::Parse {
                line: 1,
                message: "header must declare state_dim and action_dim".into(),
            }),
        }
    }

    /// Restores a dump into a fresh buffer. Records are re-inserted in file order,
    /// so a capacity smaller than the record count keeps only the newest ones.
    pub fn read_dump<R: BufRead>(reader: R, spec: SpaceSpec, capacity: usize) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "empty dump".into(),
        })??;
        let (ds, da) = Self::parse_dump_header(&header)?;
        if ds != spec.state_dim() || da != spec.action_dim() {
            return Err(Error::invalid(format!(
                "dump declares state_dim={ds} action_dim={da}, expected {} and {}",
                spec.state_dim(),
                spec.action_dim()
            )));
        }
        let mut buf = Self::new(spec, capacity)?;
        let flat_len = buf.flat_len;
        let mut row = Vec::with_capacity(flat_len);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != flat_len + 3 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {} fields, found {}", flat_len + 3, fields.len()),
                });
            }
            row.clear();
            for f in &fields[..flat_len] {
                row.push(f.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("bad float `{f}`"),
                })?);
            }
            let int = |f: &str| {
                f.trim().parse::<u64>().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("bad integer `{f}`"),
                })
            };
            let done = match int(fields[flat_len])? {
                0 => false,
                1 => true,
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("done must be 0 or 1, found {other}"),
                    })
                }
            };
            let ep = int(fields[flat_len + 1])?;
            let step = int(fields[flat_len + 2])?;
            buf.insert_flat(&FlatVector::from_raw(row.clone()), done, ep, step)?;
        }
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    fn spec() -> SpaceSpec {
        SpaceSpec::symmetric(2, 1, 1.0).unwrap()
    }

    fn tr(v: f64, ep: u64, step: u64) -> Transition {
        Transition {
            s: vec![v, -v],
            a: vec![v / 2.0],
            r: v,
            s2: vec![v + 1.0, v - 1.0],
            done: false,
            episode_id: ep,
            step_idx: step,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = RingBuffer::new(spec(), 2).unwrap();
        for (i, v) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            buf.insert(&tr(v, 0, i as u64)).unwrap();
        }
        assert_eq!(buf.len(), 2);
        let rewards: Vec<f64> = buf
            .slots_in_insert_order()
            .map(|s| buf.get(s).unwrap().r)
            .collect();
        assert_eq!(rewards, vec![2.0, 3.0]);
    }

    #[test]
    fn single_insert_counts_one() {
        let mut buf = RingBuffer::new(spec(), 8).unwrap();
        assert!(buf.is_empty());
        assert_eq!(buf.insert(&tr(1.0, 0, 0)).unwrap(), 0);
        assert_eq!(buf.len(), 1);
    }

    #[test]
    fn contents_match_deque_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut buf = RingBuffer::new(spec(), 128).unwrap();
        let mut oracle = VecDeque::new();
        for i in 0..10_000u64 {
            let t = tr(rng.random_range(-5.0..5.0), i / 37, i % 37);
            buf.insert(&t).unwrap();
            oracle.push_back(t);
            if oracle.len() > 128 {
                oracle.pop_front();
            }
        }
        let stored: Vec<Transition> = buf
            .slots_in_insert_order()
            .map(|s| buf.get(s).unwrap())
            .collect();
        assert_eq!(stored, Vec::from(oracle));
    }

    #[test]
    fn rejects_bad_input() {
        let mut buf = RingBuffer::new(spec(), 4).unwrap();
        let mut t = tr(1.0, 0, 0);
        t.s.pop();
        assert!(matches!(buf.insert(&t), Err(Error::DimensionMismatch { .. })));
        assert!(RingBuffer::new(spec(), 0).is_err());
        assert!(buf.get(0).is_err());
        assert!(buf.successor(0).is_err());
    }

    #[test]
    fn sampling_empty_buffer_errors() {
        let buf = RingBuffer::new(spec(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample_uniform(3, &mut rng), Err(Error::EmptyBuffer)));
    }

    #[test]
    fn single_slot_always_drawn() {
        let mut buf = RingBuffer::new(spec(), 4).unwrap();
        buf.insert(&tr(1.0, 0, 0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(buf.sample_uniform(100, &mut rng).unwrap().iter().all(|&s| s == 0));
    }

    #[test]
    fn uniform_frequencies_within_three_sd() {
        let mut buf = RingBuffer::new(spec(), 4).unwrap();
        for i in 0..4 {
            buf.insert(&tr(i as f64, 0, i)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 100_000;
        let draws = buf.sample_uniform(m, &mut rng).unwrap();
        let mut counts = [0usize; 4];
        for d in draws {
            counts[d] += 1;
        }
        let p = 0.25;
        let bound = 3.0 * (p * (1.0 - p) / m as f64).sqrt();
        for c in counts {
            assert!((c as f64 / m as f64 - p).abs() < bound, "{counts:?}");
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut buf = RingBuffer::new(spec(), 16).unwrap();
        for i in 0..16 {
            buf.insert(&tr(i as f64, 0, i)).unwrap();
        }
        let a = buf.sample_uniform(50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = buf.sample_uniform(50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn successor_links() {
        let mut buf = RingBuffer::new(spec(), 8).unwrap();
        let a = buf.insert(&tr(0.0, 0, 0)).unwrap();
        let b = buf.insert(&tr(1.0, 0, 1)).unwrap();
        let c = buf.insert(&tr(2.0, 1, 0)).unwrap();
        assert_eq!(buf.successor(a).unwrap(), Some(b));
        assert_eq!(buf.successor(b).unwrap(), None);
        assert_eq!(buf.successor(c).unwrap(), None);
    }

    #[test]
    fn successor_respects_eviction() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cap = 5;
        let mut buf = RingBuffer::new(spec(), cap).unwrap();
        let mut live: VecDeque<(u64, u64)> = VecDeque::new();
        let mut ep = 0u64;
        let mut step = 0u64;
        for _ in 0..500 {
            if rng.random_bool(0.3) {
                ep += 1;
                step = 0;
            }
            buf.insert(&tr(rng.random(), ep, step)).unwrap();
            live.push_back((ep, step));
            if live.len() > cap {
                live.pop_front();
            }
            step += 1;
            for slot in buf.slots_in_insert_order() {
                let key = (buf.episode_id(slot), buf.step_idx(slot));
                let expected = live.contains(&(key.0, key.1 + 1));
                let got = buf.successor(slot).unwrap();
                assert_eq!(got.is_some(), expected);
                if let Some(s) = got {
                    assert_eq!((buf.episode_id(s), buf.step_idx(s)), (key.0, key.1 + 1));
                }
            }
        }
    }

    #[test]
    fn successor_gone_after_wraparound() {
        let mut buf = RingBuffer::new(spec(), 3).unwrap();
        buf.insert(&tr(0.0, 0, 0)).unwrap();
        buf.insert(&tr(1.0, 0, 1)).unwrap();
        buf.insert(&tr(2.0, 1, 0)).unwrap();
        // evicts (0,0); then (0,1) is gone too
        buf.insert(&tr(3.0, 1, 1)).unwrap();
        buf.insert(&tr(4.0, 2, 0)).unwrap();
        for slot in buf.slots_in_insert_order() {
            if buf.episode_id(slot) == 1 && buf.step_idx(slot) == 0 {
                let s = buf.successor(slot).unwrap().unwrap();
                assert_eq!(buf.get(s).unwrap().r, 3.0);
            }
        }
        buf.insert(&tr(5.0, 2, 1)).unwrap();
        // (1,0) evicted now; (1,1) has no successor
        let s11 = buf
            .slots_in_insert_order()
            .find(|&s| buf.episode_id(s) == 1 && buf.step_idx(s) == 1)
            .unwrap();
        assert_eq!(buf.successor(s11).unwrap(), None);
    }

    #[test]
    fn dump_round_trip_preserves_order_and_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut buf = RingBuffer::new(spec(), 10).unwrap();
        for i in 0..25u64 {
            let mut t = tr(rng.random::<f64>() * 1e3 - 500.0, i / 4, i % 4);
            t.done = i % 4 == 3;
            buf.insert(&t).unwrap();
        }
        let mut bytes = Vec::new();
        buf.write_dump(&mut bytes).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("nmer-buffer state_dim=2 action_dim=1\n"));
        let restored = RingBuffer::read_dump(bytes.as_slice(), spec(), 10).unwrap();
        let a: Vec<_> = buf.slots_in_insert_order().map(|s| buf.get(s).unwrap()).collect();
        let b: Vec<_> = restored
            .slots_in_insert_order()
            .map(|s| restored.get(s).unwrap())
            .collect();
        assert_eq!(a, b);
        let mut again = Vec::new();
        restored.write_dump(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn dump_rejects_mismatched_header() {
        let text = "nmer-buffer state_dim=3 action_dim=1\n";
        assert!(RingBuffer::read_dump(text.as_bytes(), spec(), 4).is_err());
        assert!(RingBuffer::read_dump("garbage\n".as_bytes(), spec(), 4).is_err());
        let short = "nmer-buffer state_dim=2 action_dim=1\n1,2,3\n";
        assert!(matches!(
            RingBuffer::read_dump(short.as_bytes(), spec(), 4),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
