//! Semiclassical simulation of photon-echo quantum memories based on
//! controlled reversible inhomogeneous broadening, with a simplified
//! quantum-repeater link model.
//!
//! Library units: time in microseconds, frequencies as angular frequencies in
//! rad/µs (so 1 MHz is `2π`). Use [`mhz`] to convert.

pub mod crib;
pub mod echo;
pub mod ensemble;
pub mod error;
pub mod fringe;
pub mod oracle;
pub mod repeater;
pub mod signal;
pub mod solver;
pub mod timebin;
pub mod waveform;

pub use error::{Error, Result};
pub use num_complex::Complex64;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Cyclic frequency in MHz to angular frequency in rad/µs.
pub fn mhz(f: f64) -> f64 {
    2.0 * std::f64::consts::PI * f
}
