//! Compact TD3 learner built on small dense networks.

pub mod net;
pub mod optim;
pub mod td3;

pub use net::{polyak, DenseNet, ForwardCache, Gradients, OutputActivation};
pub use optim::{Optimizer, OptimizerKind};
pub use td3::{Td3Agent, Td3Config, UpdateInfo};
