//! Run configuration, image files and synthetic data.

pub mod config;
pub mod pnm;
pub mod synth;

pub use config::{parse_shape, Preset, RunConfig, SEED_ENV};
