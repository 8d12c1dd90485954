//! Experiment pipeline behind the `coind` binary.

pub mod cli;
pub mod config;
pub mod pipeline;

pub use config::{derive_seed, preset, ExperimentConfig, RunSpec, SamplerKind, Task, PRESETS};
pub use pipeline::Experiment;
