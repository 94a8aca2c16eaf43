//! Reproducible experiments behind the command-line tool: oracle
//! verification, `σ`-scaling of block norms, spectra of the query-key
//! decomposition, entry histograms and depth scaling.

pub mod config;
pub mod depth;
pub mod histogram;
pub mod output;
pub mod sampling;
pub mod scaling;
pub mod spectrum;
pub mod svg;
pub mod verify;

pub use config::{Command, Dims, ExperimentConfig, Parameterization, Variant};
pub use output::RunContext;
