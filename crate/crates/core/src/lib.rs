//! Simulation and analysis toolkit for retroreflector-based satellite
//! quantum communication links.
//!
//! The crate is organised bottom-up:
//!
//! * [`polarization`]: Jones-calculus states and the unitaries of the
//!   Coudé path, corner-cube retroreflectors and Faraday rotators.
//! * [`linkbudget`]: radar equation, downlink factorisation and the
//!   inversion that estimates photons per pulse leaving the satellite.
//! * [`orbitpass`]: circular-orbit pass geometry and pass files.
//! * [`timing`]: shutter slot schedule, SLR-anchored arrival grid,
//!   time-tag gating and QBER estimators.
//! * [`protocol`]: Monte-Carlo pass sessions and the two-way
//!   Faraday-rotator key session.
//! * [`config`]: session config files.

pub mod config;
pub mod error;
pub mod format;
pub mod linkbudget;
pub mod orbitpass;
pub mod polarization;
pub mod protocol;
pub mod timing;

pub use error::{Error, Result};

/// Speed of light in vacuum, m/s (exact SI).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Planck constant, J·s (exact SI).
pub const PLANCK: f64 = 6.626_070_15e-34;
