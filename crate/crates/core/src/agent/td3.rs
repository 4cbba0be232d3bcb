//! Twin delayed deep deterministic policy gradient.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::net::{polyak, DenseNet, OutputActivation};
use super::optim::{Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::strategies::TrainingBatch;
use crate::transition::SpaceSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct Td3Config {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub policy_delay: u64,
    /// Target policy smoothing noise, as a fraction of the action half-range.
    pub target_noise: f64,
    pub target_noise_clip: f64,
    /// Exploration noise sd, as a fraction of the action half-range.
    pub exploration_noise: f64,
    /// Environment steps with uniformly random actions before the policy acts.
    pub random_steps: u64,
    pub batch_size: usize,
    pub replay_ratio: usize,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
}

impl Default for Td3Config {
    /// Smaller networks and a shorter warmup than [`Td3Config::reference`],
    /// sized for the low-dimensional toy tasks.
    fn default() -> Self {
        Self {
            random_steps: 1000,
            hidden: vec![64, 64],
            ..Self::reference()
        }
    }
}

impl Td3Config {
    /// Settings used for the published continuous-control runs.
    pub fn reference() -> Self {
        Self {
            actor_lr: 5e-4,
            critic_lr: 5e-4,
            tau: 0.005,
            gamma: 0.99,
            policy_delay: 2,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            exploration_noise: 0.1,
            random_steps: 10_000,
            batch_size: 100,
            replay_ratio: 1,
            hidden: vec![400, 300],
            optimizer: OptimizerKind::Sgd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be finite and ≥ 0, got {v}")))
            }
        };
        positive("actor_lr", self.actor_lr)?;
        positive("critic_lr", self.critic_lr)?;
        positive("target_noise", self.target_noise)?;
        positive("target_noise_clip", self.target_noise_clip)?;
        positive("exploration_noise", self.exploration_noise)?;
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::param(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::param(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.policy_delay == 0 {
            return Err(Error::param("policy_delay must be ≥ 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be ≥ 1"));
        }
        if self.replay_ratio == 0 {
            return Err(Error::param("replay_ratio must be ≥ 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::param("hidden layer sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateInfo {
    pub critic_loss: f64,
    /// `|Q1(s, a) - y|` per item, measured before the update.
    pub td_errors: Vec<f64>,
    pub actor_updated: bool,
}

#[derive(Debug, Clone)]
pub struct Td3Agent {
    spec: SpaceSpec,
    cfg: Td3Config,
    pub actor: DenseNet,
    pub critic1: DenseNet,
    pub critic2: DenseNet,
    pub actor_target: DenseNet,
    pub critic1_target: DenseNet,
    pub critic2_target: DenseNet,
    actor_opt: Optimizer,
    critic1_opt: Optimizer,
    critic2_opt: Optimizer,
    half_range: Vec<f64>,
    grad_steps: u64,
    rng: ChaCha8Rng,
}

impl Td3Agent {
    pub fn new(spec: SpaceSpec, cfg: Td3Config, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ds, da) = (spec.state_dim(), spec.action_dim());
        let mut actor_sizes = vec![ds];
        actor_sizes.extend(&cfg.hidden);
        actor_sizes.push(da);
        let mut critic_sizes = vec![ds + da];
        critic_sizes.extend(&cfg.hidden);
        critic_sizes.push(1);
        let squash = OutputActivation::TanhScaled {
            low: spec.action_low().to_vec(),
            high: spec.action_high().to_vec(),
        };
        let actor = DenseNet::new(&actor_sizes, squash, &mut rng)?;
        let critic1 = DenseNet::new(&critic_sizes, OutputActivation::Identity, &mut rng)?;
        let critic2 = DenseNet::new(&critic_sizes, OutputActivation::Identity, &mut rng)?;
        let half_range = spec
            .action_low()
            .iter()
            .zip(spec.action_high())
            .map(|(l, h)| 0.5 * (h - l))
            .collect();
        Ok(Self {
            actor_opt: Optimizer::new(cfg.optimizer, cfg.actor_lr, &actor),
            critic1_opt: Optimizer::new(cfg.optimizer, cfg.critic_lr, &critic1),
            critic2_opt: Optimizer::new(cfg.optimizer, cfg.critic_lr, &critic2),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            spec,
            cfg,
            half_range,
            grad_steps: 0,
            rng,
        })
    }

    pub fn config(&self) -> &Td3Config {
        &self.cfg
    }

    pub fn spec(&self) -> &SpaceSpec {
        &self.spec
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    /// Deterministic policy output.
    pub fn act_greedy(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward_one(s)
    }

    /// Action for environment step `env_step`: uniform during warmup, then the
    /// policy plus clipped Gaussian exploration.
    pub fn act(&mut self, s: &[f64], env_step: u64) -> Result<Vec<f64>> {
        if env_step < self.cfg.random_steps {
            return Ok(self
                .spec
                .action_low()
                .iter()
                .zip(self.spec.action_high())
                .map(|(&l, &h)| if l < h { self.rng.random_range(l..h) } else { l })
                .collect());
        }
        let mut a = self.act_greedy(s)?;
        if self.cfg.exploration_noise > 0.0 {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            for (ai, hr) in a.iter_mut().zip(&self.half_range) {
                *ai += self.cfg.exploration_noise * hr * normal.sample(&mut self.rng);
            }
        }
        self.spec.clip_action(&mut a);
        Ok(a)
    }

    fn split_batch(&self, batch: &TrainingBatch) -> Result<BatchArrays> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::EmptyBuffer);
        }
        let (ds, da) = (self.spec.state_dim(), self.spec.action_dim());
        let flat = Array2::from_shape_vec((n, self.spec.flat_len()), batch.flat_matrix())
            .map_err(|e| Error::invalid(format!("batch rows have inconsistent length: {e}")))?;
        Ok(BatchArrays {
            sa: flat.slice(s![.., ..ds + da]).to_owned(),
            s: flat.slice(s![.., ..ds]).to_owned(),
            r: flat.column(ds + da).to_vec(),
            s2: flat.slice(s![.., ds + da + 1..]).to_owned(),
            done: batch.dones.clone(),
        })
    }

    /// Clipped double-Q bootstrap targets `r + gamma (1 - done) min(Q1', Q2')`.
    pub fn targets(&mut self, batch: &TrainingBatch) -> Result<Vec<f64>> {
        let arrays = self.split_batch(batch)?;
        self.targets_from(&arrays)
    }

    fn targets_from(&mut self, b: &BatchArrays) -> Result<Vec<f64>> {
        let n = b.r.len();
        let da = self.spec.action_dim();
        let mut a2 = self.actor_target.forward(b.s2.view())?;
        if self.cfg.target_noise > 0.0 {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            for mut row in a2.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    let hr = self.half_range[j];
                    let clip = self.cfg.target_noise_clip * hr;
                    let eps = (self.cfg.target_noise * hr * normal.sample(&mut self.rng)).clamp(-clip, clip);
                    *v += eps;
                }
            }
        }
        for mut row in a2.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = v.clamp(self.spec.action_low()[j], self.spec.action_high()[j]);
            }
        }
        let ds = self.spec.state_dim();
        let mut x = Array2::zeros((n, ds + da));
        x.slice_mut(s![.., ..ds]).assign(&b.s2);
        x.slice_mut(s![.., ds..]).assign(&a2);
        let q1 = self.critic1_target.forward(x.view())?;
        let q2 = self.critic2_target.forward(x.view())?;
        Ok((0..n)
            .map(|i| {
                let q = q1[[i, 0]].min(q2[[i, 0]]);
                let cont = if b.done[i] { 0.0 } else { 1.0 };
                b.r[i] + self.cfg.gamma * cont * q
            })
            .collect())
    }

    /// One gradient step on both critics; the actor and target networks move
    /// every `policy_delay` steps.
    pub fn update(&mut self, batch: &TrainingBatch) -> Result<UpdateInfo> {
        let b = self.split_batch(batch)?;
        let n = b.r.len();
        let weights = &batch.importance_weights;
        if !weights.is_empty() {
            crate::error::check_len("importance weights", n, weights.len())?;
        }
        let y = self.targets_from(&b)?;
        let y_col = Array2::from_shape_vec((n, 1), y.clone()).expect("column shape");
        let w = (!weights.is_empty()).then_some(weights.as_slice());

        let q1 = self.critic1.forward(b.sa.view())?;
        let td_errors = (0..n).map(|i| (q1[[i, 0]] - y[i]).abs()).collect();

        let (l1, g1) = self.critic1.weighted_mse_gradients(b.sa.view(), y_col.view(), w)?;
        let (l2, g2) = self.critic2.weighted_mse_gradients(b.sa.view(), y_col.view(), w)?;
        self.critic1_opt.step(&mut self.critic1, &g1);
        self.critic2_opt.step(&mut self.critic2, &g2);
        self.grad_steps += 1;

        let actor_updated = self.grad_steps % self.cfg.policy_delay == 0;
        if actor_updated {
            self.actor_step(&b.s)?;
            polyak(&mut self.actor_target, &self.actor, self.cfg.tau)?;
            polyak(&mut self.critic1_target, &self.critic1, self.cfg.tau)?;
            polyak(&mut self.critic2_target, &self.critic2, self.cfg.tau)?;
        }
        Ok(UpdateInfo {
            critic_loss: l1 + l2,
            td_errors,
            actor_updated,
        })
    }

    /// Ascends `mean Q1(s, pi(s))` with respect to the actor parameters.
    fn actor_step(&mut self, states: &Array2<f64>) -> Result<()> {
        let n = states.nrows();
        let ds = self.spec.state_dim();
        let da = self.spec.action_dim();
        let actor_cache = self.actor.forward_cached(states.view())?;
        let mut x = Array2::zeros((n, ds + da));
        x.slice_mut(s![.., ..ds]).assign(states);
        x.slice_mut(s![.., ds..]).assign(&actor_cache.output);
        let critic_cache = self.critic1.forward_cached(x.view())?;
        let grad_q = Array2::from_elem((n, 1), -1.0 / n as f64);
        let (_, grad_x) = self.critic1.backward(&critic_cache, grad_q.view())?;
        let grad_a = grad_x.slice(s![.., ds..]).to_owned();
        let (g, _) = self.actor.backward(&actor_cache, grad_a.view())?;
        self.actor_opt.step(&mut self.actor, &g);
        Ok(())
    }
}

struct BatchArrays {
    sa: Array2<f64>,
    s: Array2<f64>,
    r: Vec<f64>,
    s2: Array2<f64>,
    done: Vec<bool>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transition::FlatVector;

    fn spec() -> SpaceSpec {
        SpaceSpec::new(3, 2, vec![-1.0, -2.0], vec![1.0, 2.0]).unwrap()
    }

    fn random_batch(spec: &SpaceSpec, n: usize, seed: u64) -> TrainingBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = TrainingBatch::with_capacity(n);
        for i in 0..n {
            let flat: Vec<f64> = (0..spec.flat_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            b.flats.push(FlatVector::from_raw(flat));
            b.dones.push(i % 5 == 0);
            b.importance_weights.push(1.0);
            b.source_slots.push(i);
            b.partner_slots.push(None);
            b.interpolated.push(false);
            b.lambdas.push(1.0);
        }
        b
    }

    fn small_cfg() -> Td3Config {
        Td3Config {
            hidden: vec![16, 16],
            batch_size: 8,
            ..Td3Config::default()
        }
    }

    #[test]
    fn noiseless_targets_match_hand_computation() {
        let spec = spec();
        let cfg = Td3Config {
            target_noise: 0.0,
            ..small_cfg()
        };
        let mut agent = Td3Agent::new(spec.clone(), cfg, 7).unwrap();
        let batch = random_batch(&spec, 12, 1);
        let y = agent.targets(&batch).unwrap();
        for (i, f) in batch.flats.iter().enumerate() {
            let s2 = f.next_state(&spec);
            let a2 = agent.actor_target.forward_one(s2).unwrap();
            let mut x = s2.to_vec();
            x.extend(&a2);
            let q1 = agent.critic1_target.forward_one(&x).unwrap()[0];
            let q2 = agent.critic2_target.forward_one(&x).unwrap()[0];
            let cont = if batch.dones[i] { 0.0 } else { 1.0 };
            let expected = f.reward(&spec) + 0.99 * cont * q1.min(q2);
            assert!((y[i] - expected).abs() < 1e-12, "{} vs {expected}", y[i]);
        }
    }

    #[test]
    fn actor_moves_only_on_delayed_steps() {
        let spec = spec();
        let mut agent = Td3Agent::new(spec.clone(), small_cfg(), 3).unwrap();
        let batch = random_batch(&spec, 8, 2);
        let mut prev = agent.actor.params();
        let mut prev_target = agent.critic1_target.params();
        for step in 1..=10u64 {
            let info = agent.update(&batch).unwrap();
            let now = agent.actor.params();
            let now_target = agent.critic1_target.params();
            assert_eq!(info.actor_updated, step % 2 == 0);
            assert_eq!(now != prev, step % 2 == 0, "step {step}");
            assert_eq!(now_target != prev_target, step % 2 == 0, "step {step}");
            prev = now;
            prev_target = now_target;
        }
    }

    #[test]
    fn zero_rates_freeze_online_networks() {
        let spec = spec();
        let cfg = Td3Config {
            actor_lr: 0.0,
            critic_lr: 0.0,
            ..small_cfg()
        };
        let mut agent = Td3Agent::new(spec.clone(), cfg, 3).unwrap();
        let before = (agent.actor.params(), agent.critic1.params(), agent.critic2.params());
        let batch = random_batch(&spec, 8, 4);
        for _ in 0..4 {
            agent.update(&batch).unwrap();
        }
        assert_eq!(before, (agent.actor.params(), agent.critic1.params(), agent.critic2.params()));
    }

    #[test]
    fn unit_weights_match_omitted_weights() {
        let spec = spec();
        let batch = random_batch(&spec, 8, 5);
        let mut no_w = batch.clone();
        no_w.importance_weights.clear();
        let mut a = Td3Agent::new(spec.clone(), small_cfg(), 9).unwrap();
        let mut b = Td3Agent::new(spec.clone(), small_cfg(), 9).unwrap();
        for _ in 0..3 {
            let ia = a.update(&batch).unwrap();
            let ib = b.update(&no_w).unwrap();
            assert_eq!(ia, ib);
        }
        assert_eq!(a.critic1.params(), b.critic1.params());
        assert_eq!(a.actor.params(), b.actor.params());
    }

    #[test]
    fn td_errors_are_nonnegative_and_critic_fits_a_fixed_batch() {
        let spec = spec();
        let cfg = Td3Config {
            gamma: 0.0,
            critic_lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            ..small_cfg()
        };
        let mut agent = Td3Agent::new(spec.clone(), cfg, 11).unwrap();
        let batch = random_batch(&spec, 16, 6);
        let first = agent.update(&batch).unwrap();
        let mut last = first.clone();
        for _ in 0..500 {
            last = agent.update(&batch).unwrap();
        }
        assert!(last.td_errors.iter().all(|e| *e >= 0.0));
        assert!(last.critic_loss < 0.1 * first.critic_loss, "{} -> {}", first.critic_loss, last.critic_loss);
    }

    #[test]
    fn actions_respect_bounds() {
        let spec = spec();
        let cfg = Td3Config {
            exploration_noise: 5.0,
            random_steps: 10,
            ..small_cfg()
        };
        let mut agent = Td3Agent::new(spec.clone(), cfg, 1).unwrap();
        for step in 0..200 {
            let a = agent.act(&[0.3, -0.2, 0.9], step).unwrap();
            for (j, v) in a.iter().enumerate() {
                assert!(*v >= spec.action_low()[j] && *v <= spec.action_high()[j]);
            }
        }
    }

    #[test]
    fn bad_config_rejected() {
        for cfg in [
            Td3Config { policy_delay: 0, ..small_cfg() },
            Td3Config { tau: 1.5, ..small_cfg() },
            Td3Config { replay_ratio: 0, ..small_cfg() },
            Td3Config { actor_lr: f64::NAN, ..small_cfg() },
        ] {
            assert!(Td3Agent::new(spec(), cfg, 0).is_err());
        }
    }
}
