//! Multi-observer quantum trajectories.
//!
//! A continuously monitored open system whose emission is split between
//! several detectors is simulated from two points of view at once: the
//! super-observer, who sees every record, and each single observer, who
//! sees only their own. The relative purity Tr[ρ_i ρ] measures how much
//! an observer knows about the full conditional state.

pub mod analytics;
pub mod config;
pub mod densmat;
pub mod engine;
pub mod error;
pub mod harness;
pub mod models;
pub mod stochastics;

pub use error::{Error, Result};
