//! Wave packets on a [`SpatialGrid`] and their Fourier-pair representations.
//!
//! Conventions: psi(p) = (2 pi)^{-1/2} integral dz psi(z) exp(-i p z) and back, so the
//! norm sum |psi|^2 * (dz or dp) is representation-independent (discrete Parseval).

use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use crate::error::{DbdError, Result};
use crate::grid::SpatialGrid;

pub const PORT_OFFSETS: [f64; 5] = [0.0, 2.0, -2.0, 4.0, -4.0];

/// Half-width of a momentum detection bin, one Brillouin zone.
pub const PORT_HALF_WIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Position,
    Momentum,
}

/// Complex amplitudes over a grid, tagged with their current representation.
///
/// Values are immutable from the caller's perspective; every operation returns a new
/// packet, so packets can be evaluated from many threads freely.
#[derive(Debug, Clone)]
pub struct WavePacket {
    grid: SpatialGrid,
    amps: Vec<C64>,
    rep: Representation,
}

pub(crate) fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    let mut planner = PLANNER
        .get_or_init(|| Mutex::new(FftPlanner::new()))
        .lock()
        .expect("FFT planner lock");
    if forward {
        planner.plan_fft_forward(n)
    } else {
        planner.plan_fft_inverse(n)
    }
}

impl WavePacket {
    /// Wraps raw amplitudes; the caller is responsible for normalization.
    pub fn from_amplitudes(
        grid: SpatialGrid,
        amps: Vec<C64>,
        rep: Representation,
    ) -> Result<Self> {
        if amps.len() != grid.n_points() {
            return Err(DbdError::AmplitudeLengthMismatch {
                expected: grid.n_points(),
                got: amps.len(),
            });
        }
        Ok(Self { grid, amps, rep })
    }

    /// Normalized Gaussian momentum distribution |psi(p)|^2 ~ N(p0, sigma_p^2).
    ///
    /// Requires at least 8 grid points per sigma_p and the whole 5 sigma support
    /// inside the first Brillouin zone, where the quasi-momentum picture is valid.
    pub fn gaussian(grid: &SpatialGrid, p0: f64, sigma_p: f64) -> Result<Self> {
        if sigma_p <= 0.0 {
            return Err(DbdError::NonPositivePulseParameter {
                name: "sigma_p",
                value: sigma_p,
            });
        }
        let points_per_sigma = sigma_p / grid.dp();
        if points_per_sigma < 8.0 {
            return Err(DbdError::PacketUnderResolved {
                sigma_p,
                dp: grid.dp(),
                points_per_sigma,
            });
        }
        let reach = p0.abs() + 5.0 * sigma_p;
        if reach >= 1.0 {
            return Err(DbdError::PacketOutsideZone { reach });
        }
        let mut amps = vec![C64::new(0.0, 0.0); grid.n_points()];
        for (k, a) in amps.iter_mut().enumerate() {
            let u = (grid.momentum(k) - p0) / sigma_p;
            if u.abs() <= 8.0 {
                *a = C64::new((-0.25 * u * u).exp(), 0.0);
            }
        }
        let mut packet = Self {
            grid: grid.clone(),
            amps,
            rep: Representation::Momentum,
        };
        let norm = packet.norm_sqr().sqrt();
        packet.amps.iter_mut().for_each(|a| *a /= norm);
        Ok(packet)
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn representation(&self) -> Representation {
        self.rep
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    fn measure(&self) -> f64 {
        match self.rep {
            Representation::Position => self.grid.dz(),
            Representation::Momentum => self.grid.dp(),
        }
    }

    /// Total probability, sum |a|^2 times the grid measure.
    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.measure()
    }

    pub fn to_momentum(&self) -> Self {
        match self.rep {
            Representation::Momentum => self.clone(),
            Representation::Position => {
                let n = self.grid.n_points();
                let mut amps = self.amps.clone();
                plan(n, true).process(&mut amps);
                let scale = self.grid.dz() / (2.0 * std::f64::consts::PI).sqrt();
                let z_min = self.grid.z_min();
                for (k, a) in amps.iter_mut().enumerate() {
                    let phase = -self.grid.momentum(k) * z_min;
                    *a *= scale * C64::from_polar(1.0, phase);
                }
                Self {
                    grid: self.grid.clone(),
                    amps,
                    rep: Representation::Momentum,
                }
            }
        }
    }

    pub fn to_position(&self) -> Self {
        match self.rep {
            Representation::Position => self.clone(),
            Representation::Momentum => {
                let n = self.grid.n_points();
                let z_min = self.grid.z_min();
                let mut amps: Vec<C64> = self
                    .amps
                    .iter()
                    .enumerate()
                    .map(|(k, a)| a * C64::from_polar(1.0, self.grid.momentum(k) * z_min))
                    .collect();
                plan(n, false).process(&mut amps);
                let scale = self.grid.dp() / (2.0 * std::f64::consts::PI).sqrt();
                amps.iter_mut().for_each(|a| *a *= scale);
                Self {
                    grid: self.grid.clone(),
                    amps,
                    rep: Representation::Position,
                }
            }
        }
    }

    /// Exact momentum translation by delta_p, applied as the plane-wave factor
    /// exp(i delta_p z). Exact on the discrete grid when delta_p is a multiple of dp.
    pub fn boosted(&self, delta_p: f64) -> Self {
        let mut out = self.to_position();
        for (j, a) in out.amps.iter_mut().enumerate() {
            *a *= C64::from_polar(1.0, delta_p * out.grid.position(j));
        }
        match self.rep {
            Representation::Position => out,
            Representation::Momentum => out.to_momentum(),
        }
    }

    fn moments(&self, values: impl Fn(usize) -> f64) -> (f64, f64) {
        let measure = self.measure();
        let mut w_sum = 0.0;
        let mut mean = 0.0;
        let mut second = 0.0;
        for (i, a) in self.amps.iter().enumerate() {
            let w = a.norm_sqr() * measure;
            let v = values(i);
            w_sum += w;
            mean += w * v;
            second += w * v * v;
        }
        mean /= w_sum;
        (mean, (second / w_sum - mean * mean).max(0.0).sqrt())
    }

    /// Mean and standard deviation of momentum, from the momentum-space density.
    pub fn momentum_moments(&self) -> (f64, f64) {
        let w = self.to_momentum();
        let grid = w.grid.clone();
        w.moments(|k| grid.momentum(k))
    }

    /// Mean and standard deviation of position, from the position-space density.
    pub fn position_moments(&self) -> (f64, f64) {
        let w = self.to_position();
        let grid = w.grid.clone();
        w.moments(|j| grid.position(j))
    }

    /// Population in the five momentum ports, bins of half-width 1 hbar k_L centered
    /// at center_shift + {0, +2, -2, +4, -4}, in that order.
    pub fn port_populations(&self, center_shift: f64) -> Result<[f64; 5]> {
        if self.rep != Representation::Momentum {
            return Err(DbdError::WrongRepresentation { expected: "momentum" });
        }
        let needed = center_shift.abs() + 4.0 + PORT_HALF_WIDTH;
        let available = self.grid.momentum_extent();
        if needed > available {
            return Err(DbdError::PortBinsOutsideGrid {
                center_shift,
                needed,
                available,
            });
        }
        let dp = self.grid.dp();
        let mut ports = [0.0; 5];
        for (k, a) in self.amps.iter().enumerate() {
            let q = self.grid.momentum(k) - center_shift;
            for (port, offset) in PORT_OFFSETS.iter().enumerate() {
                let d = q - offset;
                if (-PORT_HALF_WIDTH..PORT_HALF_WIDTH).contains(&d) {
                    ports[port] += a.norm_sqr() * dp;
                    break;
                }
            }
        }
        Ok(ports)
    }

    /// Position-space probability density |psi(z)|^2.
    pub fn position_density(&self) -> Vec<f64> {
        let w = self.to_position();
        w.amps.iter().map(|a| a.norm_sqr()).collect()
    }
}
