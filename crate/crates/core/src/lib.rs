//! Flame-front laboratory: pseudo-spectral solvers for the
//! Michelson-Sivashinsky and Kuramoto-Sivashinsky equations, and
//! Koopman-style neural time-advancement operators trained on their
//! trajectories.

pub mod autodiff;
pub mod evaluation;
pub mod error;
mod io;
pub mod operators;
pub mod solver;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
