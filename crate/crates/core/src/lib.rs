//! Neighborhood Mixup Experience Replay and the baseline replay strategies it
//! is compared against, together with a compact TD3 learner, two toy control
//! tasks with known dynamics and tools to measure how far interpolated
//! transitions drift from the true transition manifold.

pub mod agent;
pub mod envs;
pub mod error;
pub mod harness;
pub mod interpolation;
pub mod manifold;
pub mod moments;
pub mod neighbors;
pub mod par;
pub mod replay;
pub mod storage;
pub mod strategies;
pub mod transition;

pub use error::{Error, Result};
pub use interpolation::{InterpolationOutcome, MixupParams, Neighborhood};
pub use moments::{RunningMoments, Standardizer};
pub use neighbors::{NeighborIndex, NeighborQuery};
pub use replay::ReplayMemory;
pub use storage::RingBuffer;
pub use strategies::{StrategyConfig, StrategyKind, SumTree, TrainingBatch};
pub use transition::{decode, encode, FlatVector, SpaceSpec, Transition};
