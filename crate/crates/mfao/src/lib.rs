//! Forward simulation and coefficient reconstruction for multi-frequency
//! acousto-optic transport.
//!
//! The pipeline runs bottom-up: [`geometry`] and [`coefficients`] describe the
//! medium, [`transport`] solves the radiative transport equation by collision
//! expansion, [`cascade`] adds the ultrasound-modulated stages, [`functional`]
//! turns boundary data into the internal functional `H`, and [`reconstruct`]
//! inverts `H` for the absorption and scattering coefficients.

pub mod cascade;
pub mod coefficients;
pub mod error;
pub mod functional;
pub mod geometry;
pub mod reconstruct;
pub mod sources;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
pub use num_complex::Complex64;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
