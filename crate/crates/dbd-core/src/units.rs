//! Recoil units of the optical lattice.
//!
//! Everything in this crate is expressed in the natural units of two-photon Bragg
//! scattering, hbar = k_L = omega_rec = 1. Because omega_rec = hbar k_L^2 / (2 m),
//! the atomic mass is then m = 1/2 and the kinetic energy of a plane wave is simply
//! E(p) = p^2 / (2 m) = p^2.
//!
//! | quantity     | unit              |
//! |--------------|-------------------|
//! | momentum     | hbar k_L          |
//! | length       | 1 / k_L           |
//! | time         | 1 / omega_rec     |
//! | energy       | hbar omega_rec    |
//! | Rabi rate    | omega_rec         |
//! | acceleration | omega_rec^2 / k_L |

/// Fixed unit constants: hbar = k_L = omega_rec = 1, which forces mass = 1/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoilFrame {
    pub hbar: f64,
    pub k_l: f64,
    pub omega_rec: f64,
    pub mass: f64,
}

impl RecoilFrame {
    pub const fn new() -> Self {
        Self {
            hbar: 1.0,
            k_l: 1.0,
            omega_rec: 1.0,
            mass: MASS,
        }
    }
}

impl Default for RecoilFrame {
    fn default() -> Self {
        Self::new()
    }
}

/// Atomic mass in recoil units: m = hbar k_L^2 / (2 omega_rec) = 1/2.
pub const MASS: f64 = 0.5;

/// Momentum transferred by one lattice order, 2 hbar k_L.
pub const LATTICE_KICK: f64 = 2.0;

/// Kinetic energy of a plane wave, p^2/(2m) = p^2 in recoil units.
#[inline]
pub fn kinetic_energy(p: f64) -> f64 {
    p * p
}

/// Momentum gained under constant acceleration g over a time t: m g t.
#[inline]
pub fn gravity_kick(g: f64, t: f64) -> f64 {
    MASS * g * t
}
