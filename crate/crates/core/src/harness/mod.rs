//! Experiment configuration and the end-to-end pipeline behind the `tnd` binary.

pub mod config;
pub mod pipeline;
pub mod synth;

pub use config::{ExperimentConfig, OUTPUT_ROOT_ENV};
