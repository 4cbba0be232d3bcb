//! Run configuration and its flat `key = value` text format.
//!
//! ```text
//! # comment
//! env.name = pendulum
//! strategy.kind = nmer
//! strategy.k = 10
//! td3.replay_ratio = 20
//! run.seed = 3
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::agent::{OptimizerKind, Td3Config};
use crate::envs::{Env, LinearEnv, PendulumEnv};
use crate::error::{Error, Result};
use crate::interpolation::MixupParams;
use crate::storage::DEFAULT_CAPACITY;
use crate::strategies::{StrategyConfig, StrategyKind};

#[derive(Debug, Clone, PartialEq)]
pub enum EnvConfig {
    Linear {
        state_dim: usize,
        action_dim: usize,
        radius: f64,
        noise_sd: f64,
        horizon: u64,
        /// Seed of the random system matrices; independent of the run seed.
        system_seed: u64,
    },
    Pendulum {
        mass: f64,
        length: f64,
        gravity: f64,
        dt: f64,
        max_torque: f64,
        max_speed: f64,
        horizon: u64,
    },
}

impl EnvConfig {
    pub fn linear() -> Self {
        EnvConfig::Linear {
            state_dim: 4,
            action_dim: 2,
            radius: 0.95,
            noise_sd: 0.0,
            horizon: 200,
            system_seed: 0,
        }
    }

    pub fn pendulum() -> Self {
        let p = PendulumEnv::default();
        EnvConfig::Pendulum {
            mass: p.mass,
            length: p.length,
            gravity: p.gravity,
            dt: p.dt,
            max_torque: p.max_torque,
            max_speed: p.max_speed,
            horizon: p.horizon,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Linear { .. } => "linear",
            EnvConfig::Pendulum { .. } => "pendulum",
        }
    }

    pub fn build(&self) -> Result<Box<dyn Env>> {
        Ok(match *self {
            EnvConfig::Linear {
                state_dim,
                action_dim,
                radius,
                noise_sd,
                horizon,
                system_seed,
            } => Box::new(LinearEnv::random(state_dim, action_dim, radius, noise_sd, horizon, system_seed)?),
            EnvConfig::Pendulum {
                mass,
                length,
                gravity,
                dt,
                max_torque,
                max_speed,
                horizon,
            } => Box::new(PendulumEnv::new(mass, length, gravity, dt, max_torque, max_speed, horizon)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub strategy: StrategyConfig,
    pub td3: Td3Config,
    pub total_env_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub smoothing_window: usize,
    pub buffer_capacity: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::pendulum(),
            strategy: StrategyConfig::default(),
            td3: Td3Config::default(),
            total_env_steps: 50_000,
            eval_interval: 1000,
            eval_episodes: 5,
            smoothing_window: 11,
            buffer_capacity: DEFAULT_CAPACITY,
            seed: 0,
            out_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("bad value `{value}` for `{key}`: expected true or false"))),
    }
}

fn fmt_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        // env.name must be applied first so env parameters land on the right variant
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            entries.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        for (line, k, v) in entries.iter().filter(|e| e.1 == "env.name") {
            cfg.set(k, v).map_err(|e| Error::Parse {
                line: *line,
                message: e.to_string(),
            })?;
        }
        for (line, k, v) in entries.iter().filter(|e| e.1 != "env.name") {
            cfg.set(k, v).map_err(|e| Error::Parse {
                line: *line,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Applies one `key = value` setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.strategy;
        let t = &mut self.td3;
        match key {
            "env.name" => {
                self.env = match value {
                    "linear" => EnvConfig::linear(),
                    "pendulum" => EnvConfig::pendulum(),
                    other => return Err(Error::config(format!("unknown env `{other}` (linear|pendulum)"))),
                }
            }
            "env.horizon" => match &mut self.env {
                EnvConfig::Linear { horizon, .. } | EnvConfig::Pendulum { horizon, .. } => *horizon = parse(key, value)?,
            },
            _ if key.starts_with("env.") => self.set_env_param(key, value)?,

            "strategy.kind" => s.kind = parse(key, value)?,
            "strategy.k" => s.k = parse(key, value)?,
            "strategy.exclude_self" => s.exclude_self = parse_bool(key, value)?,
            "strategy.mixup_alpha" => s.mixup = MixupParams::new(parse(key, value)?)?,
            "strategy.per_alpha" => s.per_alpha = parse(key, value)?,
            "strategy.per_beta_initial" => s.per_beta_initial = parse(key, value)?,
            "strategy.per_beta_final" => s.per_beta_final = parse(key, value)?,
            "strategy.per_beta_anneal_steps" => s.per_beta_anneal_steps = parse(key, value)?,
            "strategy.per_epsilon" => s.per_epsilon = parse(key, value)?,
            "strategy.noise_scale" => s.noise_sigma_scale = parse(key, value)?,
            "strategy.interp_fraction" => s.interp_fraction = parse(key, value)?,
            "strategy.fixed_lambda" => {
                s.fixed_lambda = if value == "none" { None } else { Some(parse(key, value)?) }
            }

            "td3.lr" => {
                t.actor_lr = parse(key, value)?;
                t.critic_lr = t.actor_lr;
            }
            "td3.actor_lr" => t.actor_lr = parse(key, value)?,
            "td3.critic_lr" => t.critic_lr = parse(key, value)?,
            "td3.tau" => t.tau = parse(key, value)?,
            "td3.gamma" => t.gamma = parse(key, value)?,
            "td3.policy_delay" => t.policy_delay = parse(key, value)?,
            "td3.target_noise" => t.target_noise = parse(key, value)?,
            "td3.target_noise_clip" => t.target_noise_clip = parse(key, value)?,
            "td3.exploration_noise" => t.exploration_noise = parse(key, value)?,
            "td3.random_steps" => t.random_steps = parse(key, value)?,
            "td3.batch_size" => t.batch_size = parse(key, value)?,
            "td3.replay_ratio" => t.replay_ratio = parse(key, value)?,
            "td3.optimizer" => t.optimizer = parse::<OptimizerKind>(key, value)?,
            "td3.hidden" => {
                t.hidden = value
                    .split(',')
                    .map(|p| parse(key, p.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }

            "run.total_env_steps" => self.total_env_steps = parse(key, value)?,
            "run.eval_interval" => self.eval_interval = parse(key, value)?,
            "run.eval_episodes" => self.eval_episodes = parse(key, value)?,
            "run.smoothing_window" => self.smoothing_window = parse(key, value)?,
            "run.buffer_capacity" => self.buffer_capacity = parse(key, value)?,
            "run.seed" => self.seed = parse(key, value)?,
            "run.out" => self.out_dir = Some(PathBuf::from(value)),
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn set_env_param(&mut self, key: &str, value: &str) -> Result<()> {
        let env_name = self.env.name();
        let unknown = || Error::config(format!("unknown key `{key}` for env `{env_name}`"));
        match &mut self.env {
            EnvConfig::Linear {
                state_dim,
                action_dim,
                radius,
                noise_sd,
                system_seed,
                ..
            } => match key {
                "env.state_dim" => *state_dim = parse(key, value)?,
                "env.action_dim" => *action_dim = parse(key, value)?,
                "env.radius" => *radius = parse(key, value)?,
                "env.noise_sd" => *noise_sd = parse(key, value)?,
                "env.system_seed" => *system_seed = parse(key, value)?,
                _ => return Err(unknown()),
            },
            EnvConfig::Pendulum {
                mass,
                length,
                gravity,
                dt,
                max_torque,
                max_speed,
                ..
            } => match key {
                "env.mass" => *mass = parse(key, value)?,
                "env.length" => *length = parse(key, value)?,
                "env.gravity" => *gravity = parse(key, value)?,
                "env.dt" => *dt = parse(key, value)?,
                "env.max_torque" => *max_torque = parse(key, value)?,
                "env.max_speed" => *max_speed = parse(key, value)?,
                _ => return Err(unknown()),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        self.td3.validate()?;
        self.env.build()?;
        if self.eval_interval == 0 {
            return Err(Error::config("run.eval_interval must be ≥ 1"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("run.eval_episodes must be ≥ 1"));
        }
        if self.smoothing_window == 0 || self.smoothing_window % 2 == 0 {
            return Err(Error::config(format!(
                "run.smoothing_window must be odd and ≥ 1, got {}",
                self.smoothing_window
            )));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::config("run.buffer_capacity must be ≥ 1"));
        }
        let needed = self.strategy.min_population() as u64;
        if self.td3.random_steps + 1 < needed {
            return Err(Error::config(format!(
                "td3.random_steps = {} leaves too few stored transitions for strategy `{}` (needs {needed})",
                self.td3.random_steps, self.strategy.kind
            )));
        }
        if (self.buffer_capacity as u64) < needed {
            return Err(Error::config("run.buffer_capacity is smaller than the strategy's minimum population"));
        }
        Ok(())
    }

    /// Short identifier, unique within a grid over strategy, ratio, k and seed.
    pub fn run_name(&self) -> String {
        let k = if self.strategy.kind.uses_neighbor_index() {
            format!("_k{}", self.strategy.k)
        } else {
            String::new()
        };
        format!(
            "{}_{}_rr{}{}_seed{}",
            self.env.name(),
            self.strategy.kind,
            self.td3.replay_ratio,
            k,
            self.seed
        )
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| writeln!(o, "{k} = {v}").unwrap();
        kv("env.name", self.env.name().into());
        match &self.env {
            EnvConfig::Linear {
                state_dim,
                action_dim,
                radius,
                noise_sd,
                horizon,
                system_seed,
            } => {
                kv("env.state_dim", state_dim.to_string());
                kv("env.action_dim", action_dim.to_string());
                kv("env.radius", radius.to_string());
                kv("env.noise_sd", noise_sd.to_string());
                kv("env.horizon", horizon.to_string());
                kv("env.system_seed", system_seed.to_string());
            }
            EnvConfig::Pendulum {
                mass,
                length,
                gravity,
                dt,
                max_torque,
                max_speed,
                horizon,
            } => {
                kv("env.mass", mass.to_string());
                kv("env.length", length.to_string());
                kv("env.gravity", gravity.to_string());
                kv("env.dt", dt.to_string());
                kv("env.max_torque", max_torque.to_string());
                kv("env.max_speed", max_speed.to_string());
                kv("env.horizon", horizon.to_string());
            }
        }
        let s = &self.strategy;
        kv("strategy.kind", s.kind.to_string());
        kv("strategy.k", s.k.to_string());
        kv("strategy.exclude_self", s.exclude_self.to_string());
        kv("strategy.mixup_alpha", s.mixup.alpha().to_string());
        kv("strategy.per_alpha", s.per_alpha.to_string());
        kv("strategy.per_beta_initial", s.per_beta_initial.to_string());
        kv("strategy.per_beta_final", s.per_beta_final.to_string());
        kv("strategy.per_beta_anneal_steps", s.per_beta_anneal_steps.to_string());
        kv("strategy.per_epsilon", s.per_epsilon.to_string());
        kv("strategy.noise_scale", s.noise_sigma_scale.to_string());
        kv("strategy.interp_fraction", s.interp_fraction.to_string());
        kv(
            "strategy.fixed_lambda",
            s.fixed_lambda.map_or("none".into(), |l| l.to_string()),
        );
        let t = &self.td3;
        kv("td3.actor_lr", t.actor_lr.to_string());
        kv("td3.critic_lr", t.critic_lr.to_string());
        kv("td3.tau", t.tau.to_string());
        kv("td3.gamma", t.gamma.to_string());
        kv("td3.policy_delay", t.policy_delay.to_string());
        kv("td3.target_noise", t.target_noise.to_string());
        kv("td3.target_noise_clip", t.target_noise_clip.to_string());
        kv("td3.exploration_noise", t.exploration_noise.to_string());
        kv("td3.random_steps", t.random_steps.to_string());
        kv("td3.batch_size", t.batch_size.to_string());
        kv("td3.replay_ratio", t.replay_ratio.to_string());
        kv("td3.hidden", fmt_list(&t.hidden));
        kv("td3.optimizer", t.optimizer.to_string());
        kv("run.total_env_steps", self.total_env_steps.to_string());
        kv("run.eval_interval", self.eval_interval.to_string());
        kv("run.eval_episodes", self.eval_episodes.to_string());
        kv("run.smoothing_window", self.smoothing_window.to_string());
        kv("run.buffer_capacity", self.buffer_capacity.to_string());
        kv("run.seed", self.seed.to_string());
        if let Some(out) = &self.out_dir {
            kv("run.out", out.display().to_string());
        }
        o
    }

    pub fn with_strategy(mut self, kind: StrategyKind) -> Self {
        self.strategy.kind = kind;
        self
    }
}
