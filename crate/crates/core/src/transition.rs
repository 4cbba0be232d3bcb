//! Transition data model and the flat `[s | a | r | s2]` encoding that every
//! replay strategy interpolates.

use crate::error::{check_len, Error, Result};

/// Dimensions and action bounds of a continuous-control task.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceSpec {
    state_dim: usize,
    action_dim: usize,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
}

impl SpaceSpec {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
    ) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::invalid("state_dim must be >= 1"));
        }
        if action_dim == 0 {
            return Err(Error::invalid("action_dim must be >= 1"));
        }
        check_len("action_low", action_dim, action_low.len())?;
        check_len("action_high", action_dim, action_high.len())?;
        for (j, (lo, hi)) in action_low.iter().zip(&action_high).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!(
                    "action bounds must satisfy low < high, dimension {j} has [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self {
            state_dim,
            action_dim,
            action_low,
            action_high,
        })
    }

    /// Symmetric bounds `[-limit, limit]` on every action dimension.
    pub fn symmetric(state_dim: usize, action_dim: usize, limit: f64) -> Result<Self> {
        Self::new(
            state_dim,
            action_dim,
            vec![-limit; action_dim],
            vec![limit; action_dim],
        )
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn action_low(&self) -> &[f64] {
        &self.action_low
    }

    pub fn action_high(&self) -> &[f64] {
        &self.action_high
    }

    /// Length of the concatenated state-action features used for neighbor search.
    pub fn feature_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    /// Length of a [`FlatVector`]: `2 * state_dim + action_dim + 1`.
    pub fn flat_len(&self) -> usize {
        2 * self.state_dim + self.action_dim + 1
    }

    pub fn reward_index(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn clip_action(&self, a: &mut [f64]) {
        for ((x, lo), hi) in a.iter_mut().zip(&self.action_low).zip(&self.action_high) {
            *x = x.clamp(*lo, *hi);
        }
    }
}

/// One environment interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s2: Vec<f64>,
    pub done: bool,
    pub episode_id: u64,
    pub step_idx: u64,
}

impl Transition {
    pub fn validate(&self, spec: &SpaceSpec) -> Result<()> {
        check_len("state", spec.state_dim, self.s.len())?;
        check_len("action", spec.action_dim, self.a.len())?;
        check_len("next state", spec.state_dim, self.s2.len())?;
        let finite = self
            .s
            .iter()
            .chain(&self.a)
            .chain(&self.s2)
            .chain(std::iter::once(&self.r))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("transition contains non-finite values"));
        }
        Ok(())
    }
}

/// Numeric content of a transition laid out as `[s | a | r | s2]`.
///
/// The termination flag is never part of the flat vector; it travels as
/// sidecar metadata so it is never interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatVector(Vec<f64>);

impl FlatVector {
    pub fn from_vec(data: Vec<f64>, spec: &SpaceSpec) -> Result<Self> {
        check_len("flat vector", spec.flat_len(), data.len())?;
        Ok(Self(data))
    }

    /// Wraps raw data without checking it against a [`SpaceSpec`].
    pub fn from_raw(data: Vec<f64>) -> Self {
        Self(data)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn state<'a>(&'a self, spec: &SpaceSpec) -> &'a [f64] {
        &self.0[..spec.state_dim]
    }

    pub fn action<'a>(&'a self, spec: &SpaceSpec) -> &'a [f64] {
        &self.0[spec.state_dim..spec.feature_dim()]
    }

    pub fn state_action<'a>(&'a self, spec: &SpaceSpec) -> &'a [f64] {
        &self.0[..spec.feature_dim()]
    }

    pub fn reward(&self, spec: &SpaceSpec) -> f64 {
        self.0[spec.reward_index()]
    }

    pub fn next_state<'a>(&'a self, spec: &SpaceSpec) -> &'a [f64] {
        &self.0[spec.reward_index() + 1..]
    }
}

pub fn encode(t: &Transition, spec: &SpaceSpec) -> Result<FlatVector> {
    t.validate(spec)?;
    let mut data = Vec::with_capacity(spec.flat_len());
    data.extend_from_slice(&t.s);
    data.extend_from_slice(&t.a);
    data.push(t.r);
    data.extend_from_slice(&t.s2);
    Ok(FlatVector(data))
}

pub fn decode(
    x: &FlatVector,
    done: bool,
    episode_id: u64,
    step_idx: u64,
    spec: &SpaceSpec,
) -> Result<Transition> {
    check_len("flat vector", spec.flat_len(), x.len())?;
    Ok(Transition {
        s: x.state(spec).to_vec(),
        a: x.action(spec).to_vec(),
        r: x.reward(spec),
        s2: x.next_state(spec).to_vec(),
        done,
        episode_id,
        step_idx,
    })
}
