//! Simulator and controller-synthesis toolkit for a pair of coupled
//! Korteweg–de Vries equations on the periodic torus: spectral data of the
//! linearized operator, exact linear controls by the moment method,
//! feedback stabilization, and local nonlinear steering.

pub mod cli;
pub mod damping;
pub mod error;
pub mod evolution;
pub mod field;
pub mod moment;
pub mod params;
pub mod spectral;

pub use error::{Error, Result};
