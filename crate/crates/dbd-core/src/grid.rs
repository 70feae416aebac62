//! Uniform position grid and its Fourier-dual momentum grid.

use std::f64::consts::PI;

use crate::error::{DbdError, Result};

/// Uniform grid of `n_points` positions on [z_min, z_max) with its dual momentum grid.
///
/// The duality dp * dz * n_points = 2 pi holds exactly by construction; momenta are
/// stored in FFT order (0, dp, ..., p_max - dp, -p_max, ..., -dp).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    n_points: usize,
    z_min: f64,
    z_max: f64,
    dz: f64,
    dp: f64,
}

impl SpatialGrid {
    pub fn new(n_points: usize, z_min: f64, z_max: f64) -> Result<Self> {
        if !n_points.is_power_of_two() {
            return Err(DbdError::GridSizeNotPowerOfTwo(n_points));
        }
        if !(z_min < z_max) {
            return Err(DbdError::GridExtentEmpty { z_min, z_max });
        }
        let dz = (z_max - z_min) / n_points as f64;
        let dp = 2.0 * PI / (z_max - z_min);
        Ok(Self { n_points, z_min, z_max, dz, dp })
    }

    /// Default grid for interferometer runs: 2^13 points over z in [-256 pi, 256 pi],
    /// i.e. dz = pi/16 and a momentum extent of +-16 hbar k_L, beyond the +-14.5 where
    /// any population is ever generated here.
    pub fn default_interferometer() -> Self {
        Self::new(1 << 13, -256.0 * PI, 256.0 * PI).expect("valid literal grid")
    }

    /// Wide narrow-packet grid: 2^15 points over z in [-800 pi, 800 pi] resolves
    /// sigma_p = 0.01 packets (dp = 1/800) while keeping the momentum extent above
    /// +-20 hbar k_L.
    pub fn narrow_packet() -> Self {
        Self::new(1 << 15, -800.0 * PI, 800.0 * PI).expect("valid literal grid")
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn z_min(&self) -> f64 {
        self.z_min
    }

    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn dp(&self) -> f64 {
        self.dp
    }

    /// Largest momentum magnitude representable on the grid, n/2 * dp.
    pub fn momentum_extent(&self) -> f64 {
        0.5 * self.n_points as f64 * self.dp
    }

    /// Position of storage index j.
    #[inline]
    pub fn position(&self, j: usize) -> f64 {
        self.z_min + j as f64 * self.dz
    }

    /// Signed momentum of storage index k (FFT order).
    #[inline]
    pub fn momentum(&self, k: usize) -> f64 {
        if k < self.n_points / 2 {
            k as f64 * self.dp
        } else {
            (k as f64 - self.n_points as f64) * self.dp
        }
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.position(j)).collect()
    }

    pub fn momenta(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.momentum(k)).collect()
    }
}
