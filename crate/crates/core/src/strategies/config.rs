use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::interpolation::{MixupParams, Neighborhood};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    Uniform,
    Per,
    Ct,
    Nmer,
    Knn1Mixup,
    NaiveMixup,
    S4rl,
    Noisy,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::Uniform,
        StrategyKind::Per,
        StrategyKind::Ct,
        StrategyKind::Nmer,
        StrategyKind::Knn1Mixup,
        StrategyKind::NaiveMixup,
        StrategyKind::S4rl,
        StrategyKind::Noisy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Uniform => "uniform",
            StrategyKind::Per => "per",
            StrategyKind::Ct => "ct",
            StrategyKind::Nmer => "nmer",
            StrategyKind::Knn1Mixup => "knn1_mixup",
            StrategyKind::NaiveMixup => "naive_mixup",
            StrategyKind::S4rl => "s4rl",
            StrategyKind::Noisy => "noisy",
        }
    }

    /// Whether sampling needs the standardized neighbor index.
    pub fn uses_neighbor_index(&self) -> bool {
        matches!(self, StrategyKind::Nmer | StrategyKind::Knn1Mixup)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = StrategyKind::ALL.iter().map(|k| k.name()).collect();
                Error::param(format!(
                    "unknown strategy `{s}`, expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Neighborhood size for NMER.
    pub k: usize,
    /// Whether a transition is excluded from its own neighborhood.
    pub exclude_self: bool,
    pub mixup: MixupParams,
    pub per_alpha: f64,
    pub per_beta_initial: f64,
    pub per_beta_final: f64,
    pub per_beta_anneal_steps: u64,
    pub per_epsilon: f64,
    /// Noise sd relative to each component's stored standard deviation.
    pub noise_sigma_scale: f64,
    /// Share of batch items that are interpolated; the rest pass through raw.
    pub interp_fraction: f64,
    /// Replaces the Beta draw with a constant mixing weight (diagnostics only).
    pub fixed_lambda: Option<f64>,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Uniform,
            k: 10,
            exclude_self: true,
            mixup: MixupParams::default(),
            per_alpha: 0.6,
            per_beta_initial: 0.4,
            per_beta_final: 0.4,
            per_beta_anneal_steps: 20_000,
            per_epsilon: 1e-6,
            noise_sigma_scale: 0.1,
            interp_fraction: 1.0,
            fixed_lambda: None,
        }
    }
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::param("k must be ≥ 1"));
        }
        if !(self.per_alpha >= 0.0 && self.per_alpha.is_finite()) {
            return Err(Error::param("per_alpha must be a finite value >= 0"));
        }
        for (name, beta) in [
            ("per_beta_initial", self.per_beta_initial),
            ("per_beta_final", self.per_beta_final),
        ] {
            if !(0.0..=1.0).contains(&beta) {
                return Err(Error::param(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.per_epsilon > 0.0 && self.per_epsilon.is_finite()) {
            return Err(Error::param("per_epsilon must be > 0"));
        }
        if !(self.noise_sigma_scale >= 0.0 && self.noise_sigma_scale.is_finite()) {
            return Err(Error::param("noise_sigma_scale must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.interp_fraction) {
            return Err(Error::param("interp_fraction must lie in [0, 1]"));
        }
        if let Some(l) = self.fixed_lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::param("fixed_lambda must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Neighborhood used by the mixup-family strategies.
    pub fn neighborhood(&self) -> Option<Neighborhood> {
        match self.kind {
            StrategyKind::Nmer => Some(Neighborhood::Nearest {
                k: self.k,
                exclude_self: self.exclude_self,
            }),
            StrategyKind::Knn1Mixup => Some(Neighborhood::Nearest {
                k: 1,
                exclude_self: self.exclude_self,
            }),
            StrategyKind::NaiveMixup => Some(Neighborhood::All),
            _ => None,
        }
    }

    /// Smallest buffer population the strategy can sample from.
    pub fn min_population(&self) -> usize {
        self.neighborhood().map_or(1, |h| h.min_population())
    }

    /// Importance-sampling exponent after `step` gradient steps, annealed linearly.
    pub fn per_beta(&self, step: u64) -> f64 {
        if self.per_beta_anneal_steps == 0 {
            return self.per_beta_final;
        }
        let frac = (step as f64 / self.per_beta_anneal_steps as f64).min(1.0);
        self.per_beta_initial + (self.per_beta_final - self.per_beta_initial) * frac
    }
}
