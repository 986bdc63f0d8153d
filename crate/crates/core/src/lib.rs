//! Generalized promotion time cure model.
//!
//! Closed-form survival, density and hazard evaluation for subjects whose
//! clonogenic cells fall into several clusters, right-censored maximum
//! likelihood, dual-mechanism simulation, replicated Monte Carlo studies and
//! reliability of series/parallel structures with a Poisson number of units.

pub mod dataset;
pub mod error;
pub mod estimate;
pub mod cli;
pub mod likelihood;
pub mod mc_study;
pub mod model;
pub mod reliability;
pub mod simulate;
pub mod special_math;

pub use error::{GptcmError, Result};
