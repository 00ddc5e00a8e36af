//! Particle-based statistical shape models of bilateral surfaces and
//! point-wise left/right asymmetry analysis.

pub mod alignment;
pub mod asymmetry;
pub mod error;
pub mod particle_optim;
pub mod pipeline;
pub mod stats;
pub mod surface;
pub mod synthcohort;

pub use error::{Error, Result};
