//! Double Bragg diffraction Mach-Zehnder atom interferometry under constant
//! acceleration: an exact split-step Schroedinger solver, a five-level S-matrix model,
//! fringe and contrast scans, Monte-Carlo lattice-depth robustness, and an optimal
//! control module that re-derives the optimized mirror pulse.
//!
//! All quantities are expressed in recoil units hbar = k_L = omega_rec = 1 (see
//! [`units`]); the atomic mass is then 1/2 and kinetic energy is p^2.

pub mod error;
pub mod exact;
pub mod five_level;
pub mod grid;
pub mod interferometer;
pub mod oct;
pub mod ode;
pub mod packet;
pub mod pulses;
pub mod quadrature;
pub mod robustness;
pub mod spline;
pub mod units;

pub use error::{DbdError, Result};
pub use grid::SpatialGrid;
pub use packet::{Representation, WavePacket};
pub use pulses::{
    DetuningProfile, GaussianEnvelope, PulseSpec, Strategy, StrategyPreset,
};

/// Crate version, quoted in CLI output headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
