//! Retrieval of head-impact information from tri-axial head kinematics.
//!
//! The crate covers signal conditioning and feature construction
//! ([`kinematics`]), impact geometry ([`geometry`]), rigid-body estimators
//! ([`baselines`]), a lumped-parameter impact simulator ([`surrogate`]),
//! LSTM models ([`model`]) and evaluation ([`eval`]).

pub mod baselines;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod kinematics;
pub mod model;
pub mod surrogate;

pub use error::{Error, Result};
