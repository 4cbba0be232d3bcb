use ndarray::{Array1, Array2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Env, Step};
use crate::error::{check_len, Error, Result};
use crate::transition::SpaceSpec;

/// `s2 = A s + B a + noise`, `r = w . [s | a] + b`.
///
/// With zero noise the transition manifold is an affine subspace, so every
/// convex combination of real transitions is itself a real transition.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEnv {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub w: Array1<f64>,
    pub bias: f64,
    pub noise_sd: f64,
    pub horizon: u64,
    pub reset_bound: f64,
    spec: SpaceSpec,
}

impl LinearEnv {
    pub fn new(
        a: Array2<f64>,
        b: Array2<f64>,
        w: Array1<f64>,
        bias: f64,
        noise_sd: f64,
        horizon: u64,
    ) -> Result<Self> {
        let ds = a.nrows();
        if a.ncols() != ds {
            return Err(Error::invalid("A must be square"));
        }
        check_len("B rows", ds, b.nrows())?;
        let da = b.ncols();
        check_len("reward weights", ds + da, w.len())?;
        if !(noise_sd.is_finite() && noise_sd >= 0.0) {
            return Err(Error::param(format!("noise_sd must be ≥ 0, got {noise_sd}")));
        }
        if horizon == 0 {
            return Err(Error::param("horizon must be ≥ 1"));
        }
        Ok(Self {
            spec: SpaceSpec::symmetric(ds, da, 1.0)?,
            a,
            b,
            w,
            bias,
            noise_sd,
            horizon,
            reset_bound: 1.0,
        })
    }

    /// Random system: `A` a scaled random orthogonal matrix (every eigenvalue
    /// has modulus `radius`), Gaussian `B`, unit-norm `w`, zero bias.
    pub fn random(state_dim: usize, action_dim: usize, radius: f64, noise_sd: f64, horizon: u64, seed: u64) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::param("linear env needs positive dimensions"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_orthogonal(state_dim, &mut rng) * radius;
        let b = Array2::from_shape_fn((state_dim, action_dim), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.5 * z
        });
        let mut w: Array1<f64> = Array1::from_shape_fn(state_dim + action_dim, |_| StandardNormal.sample(&mut rng));
        let norm = w.dot(&w).sqrt();
        w /= norm;
        Self::new(a, b, w, 0.0, noise_sd, horizon)
    }

    /// Four states, two actions, radius 0.95, noiseless, horizon 200.
    pub fn default_with_seed(seed: u64) -> Result<Self> {
        Self::random(4, 2, 0.95, 0.0, 200, seed)
    }

    fn check(&self, s: &[f64], a: &[f64]) -> Result<()> {
        check_len("state", self.spec.state_dim(), s.len())?;
        check_len("action", self.spec.action_dim(), a.len())?;
        if s.iter().chain(a).any(|v| !v.is_finite()) {
            return Err(Error::invalid("state and action must be finite"));
        }
        Ok(())
    }

    fn mean_step(&self, s: &[f64], a: &[f64]) -> (f64, Vec<f64>) {
        let ds = s.len();
        let mut s2 = vec![0.0; ds];
        for (i, out) in s2.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, sj) in s.iter().enumerate() {
                acc += self.a[[i, j]] * sj;
            }
            for (j, aj) in a.iter().enumerate() {
                acc += self.b[[i, j]] * aj;
            }
            *out = acc;
        }
        let r = s.iter().chain(a).zip(&self.w).map(|(x, w)| x * w).sum::<f64>() + self.bias;
        (r, s2)
    }
}

/// Gram-Schmidt on a Gaussian matrix.
fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> Array2<f64> {
    loop {
        let mut q = Array2::<f64>::from_shape_fn((n, n), |_| StandardNormal.sample(rng));
        let mut ok = true;
        for c in 0..n {
            for p in 0..c {
                let proj = q.column(c).dot(&q.column(p));
                let prev = q.column(p).to_owned();
                q.column_mut(c).scaled_add(-proj, &prev);
            }
            let norm = q.column(c).dot(&q.column(c)).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            q.column_mut(c).mapv_inplace(|v| v / norm);
        }
        if ok {
            return q;
        }
    }
}

impl Env for LinearEnv {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn spec(&self) -> &SpaceSpec {
        &self.spec
    }

    fn horizon(&self) -> u64 {
        self.horizon
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let bound = self.reset_bound;
        (0..self.spec.state_dim()).map(|_| rng.random_range(-bound..bound)).collect()
    }

    fn step(&self, s: &[f64], a: &[f64], rng: &mut dyn RngCore) -> Result<Step> {
        self.check(s, a)?;
        let (reward, mut next_state) = self.mean_step(s, a);
        if self.noise_sd > 0.0 {
            for v in &mut next_state {
                let z: f64 = StandardNormal.sample(rng);
                *v += self.noise_sd * z;
            }
        }
        Ok(Step {
            next_state,
            reward,
            done: false,
        })
    }

    fn dynamics(&self, s: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>)> {
        if !self.is_deterministic() {
            return Err(Error::config("residuals need a noise-free environment (noise_sd = 0)"));
        }
        self.check(s, a)?;
        Ok(self.mean_step(s, a))
    }

    fn is_deterministic(&self) -> bool {
        self.noise_sd == 0.0
    }
}
