//! Per-dimension running mean and variance, and Z-score standardization.

use crate::error::{check_len, Error, Result};
use crate::storage::RingBuffer;

pub const DEFAULT_STD_FLOOR: f64 = 1e-8;

/// Welford accumulator over fixed-length feature vectors.
///
/// Variances use the population convention (`m2 / count`).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningMoments {
    dim: usize,
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    std_floor: f64,
}

impl RunningMoments {
    pub fn new(dim: usize) -> Self {
        Self::with_floor(dim, DEFAULT_STD_FLOOR)
    }

    pub fn with_floor(dim: usize, std_floor: f64) -> Self {
        assert!(dim >= 1, "moments need at least one dimension");
        assert!(std_floor > 0.0, "std floor must be positive");
        Self {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            std_floor,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn m2(&self) -> &[f64] {
        &self.m2
    }

    pub fn std_floor(&self) -> f64 {
        self.std_floor
    }

    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        check_len("moments input", self.dim, x.len())?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("moments input contains non-finite values"));
        }
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *mean;
            *mean += delta / n;
            *m2 += delta * (v - *mean);
            if *m2 < 0.0 {
                *m2 = 0.0;
            }
        }
        Ok(())
    }

    /// Population variance per dimension; zero before any update.
    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.dim];
        }
        let n = self.count as f64;
        self.m2.iter().map(|m2| m2 / n).collect()
    }

    pub fn std(&self) -> Vec<f64> {
        self.variance().into_iter().map(f64::sqrt).collect()
    }

    /// Frozen `(mean, max(std, floor))` pair used to standardize many points.
    pub fn standardizer(&self) -> Result<Standardizer> {
        if self.count == 0 {
            return Err(Error::UninitializedMoments);
        }
        let n = self.count as f64;
        let scale = self
            .m2
            .iter()
            .map(|m2| (m2 / n).sqrt().max(self.std_floor))
            .collect();
        Ok(Standardizer {
            mean: self.mean.clone(),
            scale,
        })
    }

    pub fn standardize(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("standardize input", self.dim, x.len())?;
        let st = self.standardizer()?;
        Ok(st.apply(x))
    }

    /// Replaces the accumulated state with exact two-pass statistics over the
    /// first `dim` entries of every stored row.
    pub fn recompute_full(&mut self, buf: &RingBuffer) -> Result<()> {
        if buf.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if self.dim > buf.spec().flat_len() {
            return Err(Error::invalid(format!(
                "moments dimension {} exceeds the buffer row length {}",
                self.dim,
                buf.spec().flat_len()
            )));
        }
        let n = buf.len() as f64;
        let mut mean = vec![0.0; self.dim];
        for slot in buf.slots_in_insert_order() {
            for (m, v) in mean.iter_mut().zip(&buf.flat(slot)[..self.dim]) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        // correction pass: removes the rounding left in the first mean
        let mut resid = vec![0.0; self.dim];
        for slot in buf.slots_in_insert_order() {
            for ((acc, m), v) in resid.iter_mut().zip(&mean).zip(&buf.flat(slot)[..self.dim]) {
                *acc += v - m;
            }
        }
        for (m, r) in mean.iter_mut().zip(&resid) {
            *m += r / n;
        }
        let mut m2 = vec![0.0; self.dim];
        for slot in buf.slots_in_insert_order() {
            for ((acc, m), v) in m2.iter_mut().zip(&mean).zip(&buf.flat(slot)[..self.dim]) {
                let d = v - m;
                *acc += d * d;
            }
        }
        self.count = buf.len() as u64;
        self.mean = mean;
        self.m2 = m2;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `max(std_j, floor)` per dimension.
    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    #[inline]
    pub fn z(&self, j: usize, v: f64) -> f64 {
        (v - self.mean[j]) / self.scale[j]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, &v)| self.z(j, v)).collect()
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, (o, &v)) in out.iter_mut().zip(x).enumerate() {
            *o = self.z(j, v);
        }
    }

    /// Squared Euclidean distance between a standardized query and the
    /// standardized image of the raw point `x`.
    #[inline]
    pub fn sq_dist(&self, zq: &[f64], x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (j, (&q, &v)) in zq.iter().zip(x).enumerate() {
            let d = self.z(j, v) - q;
            acc += d * d;
        }
        acc
    }
}
