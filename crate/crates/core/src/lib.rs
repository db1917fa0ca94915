//! Noise schedules, samplers as coefficient matrices, and self-guidance analysis.

pub mod affine;
pub mod analysis;
pub mod cli;
pub mod coeffmatrix;
pub mod engine;
pub mod error;
pub mod guidance;
pub mod oracles;
pub mod presets;
pub mod samplers;
pub mod schedule;
pub mod search;

pub use error::{Error, Result};
