//! Training loop, learning curves, configuration and ablation grids.

pub mod config;
pub mod curve;
pub mod grid;
pub mod run;

pub use config::{EnvConfig, RunConfig};
pub use curve::{smooth, LearningCurve, CURVE_HEADER};
pub use grid::{mean_sd, run_grid, GridCell, GridRun, GridSpec, GridSummary};
pub use run::{eval_starts, evaluate, run_experiment, write_outputs, RunResult};
pub mod study;

pub use study::{collect_random, memory_from_buffer, memory_from_transitions, residual_study};
