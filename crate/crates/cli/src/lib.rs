//! Configuration, experiment drivers and reports for the SUPG-DLR solver.
//!
//! The numerics live in [`supg_dlr_core`]; this crate wires them into
//! single runs, h-sweeps and rank sweeps on the manufactured problem, and
//! writes the results as CSV.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{ConfigError, ExperimentConfig};
pub use experiment::{
    convergence_study, diagnose, rank_study, run_single, DriverError, Level, LevelRecord, RunReport,
};
