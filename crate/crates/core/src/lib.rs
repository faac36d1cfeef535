//! Linear poroelasticity on the unit square and cube: a fine-scale P1 finite
//! element reference and a decoupled multiscale (localized orthogonal
//! decomposition) method, plus the machinery to compare the two.

pub mod coefficients;
pub mod error;
pub mod fem;
pub mod harness;
pub mod interpolation;
pub mod lod;
pub mod mesh;
pub mod metrics;
pub mod sparse;
pub mod time;

pub use error::{Error, Result};
pub use harness::{preset, run_convergence, ExperimentConfig, RunOptions, RunRecord};
