//! Experiment configuration, presets and convergence runs.

mod config;
pub mod expr;
mod run;

pub use config::{
    preset, BoundaryConfig, ConstantCoefficients, ExperimentConfig, InitialPressure, SourceConfig, PRESETS,
};
pub use run::{
    basis_path, run_convergence, ErrorInfo, Experiment, FineRecord, LevelOutcome, LevelOutput, RunDiagnostics,
    RunOptions, RunRecord, VERSION,
};
