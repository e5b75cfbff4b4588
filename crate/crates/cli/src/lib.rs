//! Experiment runner for the autonomous-optimization toolkit: instance
//! schemas, an exact integrator for the affine interconnections, figure
//! experiments, bound reports, threshold sweeps, and the property suite.

pub mod affine;
pub mod error;
pub mod experiments;
pub mod instance;
pub mod schema;
pub mod suite;

pub use error::CliError;
