//! Five-level S-matrix model of one double Bragg pulse.
//!
//! The lattice only couples momentum classes |p + 2n>, so for quasi-momentum p inside
//! the first Brillouin zone a pulse acts on the ordered basis
//! {|p>, |p+2>, |p-2>, |p+4>, |p-4>} (offsets n = 0, +1, -1, +2, -2). Each pulse is
//! integrated across its 10 tau window and expressed in the interaction picture of the
//! kinetic Hamiltonian referenced to the pulse centre, so that composing pulses with
//! full-interval free propagators treats them as centred impulses. Gravity is dropped
//! during pulses (a perturbation at these pulse lengths) and handled exactly between
//! them.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{DbdError, Result};
use crate::ode::{identity, integrate_propagator, integrate_propagator_fixed, IntegrationStats};
use crate::pulses::PulseSpec;
use crate::quadrature::gauss_legendre;
use crate::spline::CubicSpline;

/// Level offsets n of the five-level basis, in the fixed paper order.
pub const LEVEL_OFFSETS: [i32; 5] = [0, 1, -1, 2, -2];
/// Extension used for the truncation cross-check.
const LEVEL_OFFSETS_7: [i32; 7] = [0, 1, -1, 2, -2, 3, -3];
/// Index permutation implementing p -> -p parity (swaps +-1 and +-2 offsets).
pub const PARITY_PERMUTATION: [usize; 5] = [0, 2, 1, 4, 3];

/// Local tolerance of the adaptive pulse integration.
pub const SMATRIX_TOL: f64 = 1e-10;

pub type Mat5 = [[C64; 5]; 5];

/// Quasi-momentum strictly inside the first Brillouin zone (-1, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasiMomentum(f64);

impl QuasiMomentum {
    pub fn new(p: f64) -> Result<Self> {
        if p.abs() >= 1.0 || !p.is_finite() {
            return Err(DbdError::QuasiMomentumOutOfZone { p });
        }
        Ok(Self(p))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// One pulse's scattering operator on the five momentum classes at quasi-momentum p.
#[derive(Debug, Clone)]
pub struct SMatrix5 {
    pub entries: Mat5,
    pub p: f64,
}

impl SMatrix5 {
    /// Matrix element <out| S |in>; indices follow [`LEVEL_OFFSETS`].
    pub fn entry(&self, out: usize, input: usize) -> C64 {
        self.entries[out][input]
    }

    /// Max-norm deviation of S^dagger S from the identity; bounded by the population
    /// leaked to |n| > 2 during the pulse.
    pub fn unitarity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..5 {
                    acc += self.entries[k][i].conj() * self.entries[k][j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((acc - want).norm());
            }
        }
        worst
    }
}

pub fn mat_mul(a: &Mat5, b: &Mat5) -> Mat5 {
    let mut out = [[C64::new(0.0, 0.0); 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..5 {
                acc += a[i][k] * b[k][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

/// Kinetic energies (p + 2n)^2 of the five basis levels.
pub fn level_energies(p: f64) -> [f64; 5] {
    let mut e = [0.0; 5];
    for (i, n) in LEVEL_OFFSETS.iter().enumerate() {
        let q = p + 2.0 * *n as f64;
        e[i] = q * q;
    }
    e
}

fn fill_hamiltonian(offsets: &[i32], p: f64, pulse: &PulseSpec, s: f64, h: &mut [C64]) {
    let dim = offsets.len();
    h.fill(C64::new(0.0, 0.0));
    let coupling = pulse.drive_at_offset(s)
        * (pulse.laser_phase_at_offset(s).cos() + pulse.eps_pol);
    for (i, ni) in offsets.iter().enumerate() {
        let q = p + 2.0 * *ni as f64;
        h[i * dim + i] = C64::new(q * q, 0.0);
        for (j, nj) in offsets.iter().enumerate().skip(i + 1) {
            if (ni - nj).abs() == 1 {
                h[i * dim + j] = C64::new(coupling, 0.0);
                h[j * dim + i] = C64::new(coupling, 0.0);
            }
        }
    }
}

/// Same Hamiltonian in the interaction picture of the kinetic terms referenced to the
/// pulse centre: zero diagonal, couplings rotating as exp(i (E_i - E_j) s). Integrating
/// this from window edge to window edge yields the centred S-matrix directly, with no
/// large kinetic phases for the stepper to track.
fn fill_hamiltonian_interaction(
    offsets: &[i32],
    p: f64,
    pulse: &PulseSpec,
    s: f64,
    h: &mut [C64],
) {
    let dim = offsets.len();
    h.fill(C64::new(0.0, 0.0));
    let coupling = pulse.drive_at_offset(s)
        * (pulse.laser_phase_at_offset(s).cos() + pulse.eps_pol);
    if coupling == 0.0 {
        return;
    }
    for (i, ni) in offsets.iter().enumerate() {
        let qi = p + 2.0 * *ni as f64;
        for (j, nj) in offsets.iter().enumerate().skip(i + 1) {
            if (ni - nj).abs() == 1 {
                let qj = p + 2.0 * *nj as f64;
                let rotated = C64::from_polar(coupling, (qi * qi - qj * qj) * s);
                h[i * dim + j] = rotated;
                h[j * dim + i] = rotated.conj();
            }
        }
    }
}

/// The five-level Hamiltonian at time t: diagonal kinetic energies (p + 2n)^2 plus the
/// lattice coupling Omega(t) [cos Phi_L(t) + eps_pol] between levels two photon recoils
/// apart. No rotating-wave approximation is applied to the drive.
pub fn five_level_hamiltonian(p: QuasiMomentum, t: f64, pulse: &PulseSpec) -> Mat5 {
    let mut flat = [C64::new(0.0, 0.0); 25];
    fill_hamiltonian(&LEVEL_OFFSETS, p.value(), pulse, t - pulse.envelope.t0, &mut flat);
    let mut out = [[C64::new(0.0, 0.0); 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            out[i][j] = flat[i * 5 + j];
        }
    }
    out
}

enum Stepper {
    Adaptive { tol: f64 },
    Fixed { dt: f64 },
}

/// Integrates one pulse over its window in local time s = t - t0 (so the result is
/// exactly independent of where the pulse sits in a sequence). The interaction-picture
/// propagator over the full window equals the centre-referenced S-matrix
/// e^{+iE w} U e^{+iE w} without any phase stripping.
fn propagator_for(
    offsets: &[i32],
    p: f64,
    pulse: &PulseSpec,
    stepper: Stepper,
) -> Result<Vec<C64>> {
    let dim = offsets.len();
    let half_window = crate::pulses::WINDOW_SIGMAS * pulse.envelope.tau;
    let mut u = vec![C64::new(0.0, 0.0); dim * dim];
    identity(dim, &mut u);
    let ham = |s: f64, h: &mut [C64]| fill_hamiltonian_interaction(offsets, p, pulse, s, h);
    match stepper {
        Stepper::Adaptive { tol } => {
            let _: IntegrationStats =
                integrate_propagator(dim, -half_window, half_window, tol, ham, &mut u)?;
        }
        Stepper::Fixed { dt } => {
            integrate_propagator_fixed(dim, -half_window, half_window, dt, ham, &mut u)?;
        }
    }
    Ok(u)
}

fn smatrix_from_flat(flat: &[C64], dim: usize, p: f64) -> SMatrix5 {
    let mut entries = [[C64::new(0.0, 0.0); 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            entries[i][j] = flat[i * dim + j];
        }
    }
    SMatrix5 { entries, p }
}

/// S-matrix of one pulse at quasi-momentum p (adaptive integration, tolerance 1e-10).
pub fn pulse_smatrix(p: QuasiMomentum, pulse: &PulseSpec) -> Result<SMatrix5> {
    let flat = propagator_for(
        &LEVEL_OFFSETS,
        p.value(),
        pulse,
        Stepper::Adaptive { tol: SMATRIX_TOL },
    )?;
    Ok(smatrix_from_flat(&flat, 5, p.value()))
}

/// Fixed-step cross-check integrator (classical RK4, default dt = 1e-3).
pub fn pulse_smatrix_fixed_step(p: QuasiMomentum, pulse: &PulseSpec, dt: f64) -> Result<SMatrix5> {
    let flat = propagator_for(&LEVEL_OFFSETS, p.value(), pulse, Stepper::Fixed { dt })?;
    Ok(smatrix_from_flat(&flat, 5, p.value()))
}

/// Seven-level (n up to +-3) integration truncated back to the five-level block, for
/// quantifying the basis-truncation error.
pub fn pulse_smatrix_7level(p: QuasiMomentum, pulse: &PulseSpec) -> Result<SMatrix5> {
    let flat = propagator_for(
        &LEVEL_OFFSETS_7,
        p.value(),
        pulse,
        Stepper::Adaptive { tol: SMATRIX_TOL },
    )?;
    Ok(smatrix_from_flat(&flat, 7, p.value()))
}

/// Largest elementwise complex difference |S5_ij - S7_ij| between the five-level solve
/// and a seven-level solve restricted to the same block. Dominated by the light-shift
/// phase (order Omega^2 tau / dE ~ 0.1 rad) the omitted n = +-3 levels imprint on the
/// nearly unpopulated n = +-2 entries, so it measures phase bookkeeping on parasitic
/// channels rather than population error; see [`truncation_probability_difference`]
/// for the physically relevant measure.
pub fn truncation_difference(p: QuasiMomentum, pulse: &PulseSpec) -> Result<f64> {
    let s5 = pulse_smatrix(p, pulse)?;
    let s7 = pulse_smatrix_7level(p, pulse)?;
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        for j in 0..5 {
            worst = worst.max((s5.entries[i][j] - s7.entries[i][j]).norm());
        }
    }
    Ok(worst)
}

/// Largest elementwise transition-probability difference | |S5_ij|^2 - |S7_ij|^2 |
/// between the five-level solve and a seven-level solve: the basis-truncation error of
/// every population the model predicts.
pub fn truncation_probability_difference(p: QuasiMomentum, pulse: &PulseSpec) -> Result<f64> {
    let s5 = pulse_smatrix(p, pulse)?;
    let s7 = pulse_smatrix_7level(p, pulse)?;
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        for j in 0..5 {
            worst = worst
                .max((s5.entries[i][j].norm_sqr() - s7.entries[i][j].norm_sqr()).abs());
        }
    }
    Ok(worst)
}

/// Beam-splitter efficiency F_BS(p): population transferred from |p> to |p +- 2>.
pub fn bs_efficiency(p: QuasiMomentum, pulse: &PulseSpec) -> Result<f64> {
    let s = pulse_smatrix(p, pulse)?;
    Ok(s.entry(1, 0).norm_sqr() + s.entry(2, 0).norm_sqr())
}

/// Mirror efficiency F_M+(p): population transferred from |p+2> to |p-2>.
pub fn mirror_efficiency_right(p: QuasiMomentum, pulse: &PulseSpec) -> Result<f64> {
    let s = pulse_smatrix(p, pulse)?;
    Ok(s.entry(2, 1).norm_sqr())
}

/// Mirror efficiency F_M-(p): population transferred from |p-2> to |p+2>. Equals
/// F_M+(-p) by the parity symmetry of the double Bragg Hamiltonian.
pub fn mirror_efficiency_left(p: QuasiMomentum, pulse: &PulseSpec) -> Result<f64> {
    let s = pulse_smatrix(p, pulse)?;
    Ok(s.entry(1, 2).norm_sqr())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfficiencyKind {
    BeamSplitter,
    Mirror,
}

fn pointwise_efficiency(kind: EfficiencyKind, p: QuasiMomentum, pulse: &PulseSpec) -> Result<f64> {
    match kind {
        EfficiencyKind::BeamSplitter => bs_efficiency(p, pulse),
        EfficiencyKind::Mirror => mirror_efficiency_right(p, pulse),
    }
}

fn quadrature_pass(
    pulse: &PulseSpec,
    kind: EfficiencyKind,
    p0: f64,
    sigma_p: f64,
    nodes: usize,
) -> Result<f64> {
    let (xs, ws) = gauss_legendre(nodes);
    let half = 5.0 * sigma_p;
    let terms: Vec<Result<f64>> = xs
        .par_iter()
        .map(|x| {
            let p = p0 + half * x;
            let f = pointwise_efficiency(kind, QuasiMomentum::new(p)?, pulse)?;
            let weight =
                (-0.5 * ((p - p0) / sigma_p).powi(2)).exp() / (sigma_p * (2.0 * std::f64::consts::PI).sqrt());
            Ok(weight * f)
        })
        .collect();
    let mut acc = 0.0;
    for (term, w) in terms.into_iter().zip(&ws) {
        acc += w * term?;
    }
    Ok(acc * half)
}

/// Gaussian-averaged efficiency eta = integral dp |psi(p)|^2 F(p) over p0 +- 5 sigma_p.
///
/// For mirrors, p0 is the quasi-momentum centre (the packet physically rides at
/// p0 + 2 hbar k_L when the mirror acts). Needs at least 33 nodes; the result must move
/// by less than 1e-5 when the node count is doubled, else the quadrature is reported as
/// not converged.
pub fn integrated_efficiency(
    pulse: &PulseSpec,
    kind: EfficiencyKind,
    p0: f64,
    sigma_p: f64,
    nodes: usize,
) -> Result<f64> {
    if nodes < 33 {
        return Err(DbdError::QuadratureTooFewNodes(nodes));
    }
    let coarse = quadrature_pass(pulse, kind, p0, sigma_p, nodes)?;
    let fine = quadrature_pass(pulse, kind, p0, sigma_p, 2 * nodes + 1)?;
    if (fine - coarse).abs() > 1e-5 {
        return Err(DbdError::QuadratureNotConverged { change: (fine - coarse).abs() });
    }
    Ok(fine)
}

/// Default node count for efficiency integrals.
pub const DEFAULT_EFFICIENCY_NODES: usize = 65;

/// Grid of efficiencies over quasi-momentum and polarization error.
pub fn efficiency_landscape(
    pulse: &PulseSpec,
    kind: EfficiencyKind,
    p_range: (f64, f64),
    eps_range: (f64, f64),
    resolution: (usize, usize),
) -> Result<Vec<(f64, f64, f64)>> {
    let (np, neps) = resolution;
    assert!(np >= 1 && neps >= 1, "landscape resolution must be at least 1x1");
    let p_at = |i: usize| {
        if np == 1 {
            p_range.0
        } else {
            p_range.0 + (p_range.1 - p_range.0) * i as f64 / (np - 1) as f64
        }
    };
    let eps_at = |j: usize| {
        if neps == 1 {
            eps_range.0
        } else {
            eps_range.0 + (eps_range.1 - eps_range.0) * j as f64 / (neps - 1) as f64
        }
    };
    let cells: Vec<(usize, usize)> =
        (0..np).flat_map(|i| (0..neps).map(move |j| (i, j))).collect();
    cells
        .into_par_iter()
        .map(|(i, j)| {
            let p = p_at(i);
            let eps = eps_at(j);
            let varied = pulse.with_eps_pol(eps)?;
            let f = pointwise_efficiency(kind, QuasiMomentum::new(p)?, &varied)?;
            Ok((p, eps, f))
        })
        .collect()
}

/// Cubic-spline interpolant of a pulse's S-matrix entries over quasi-momentum.
///
/// Mirrors and final splitters act at momenta drifted by m g T, so a T-scan needs
/// S(p) on a continuum of arguments. The entries are smooth in p; node spacing 0.002
/// keeps the interpolation error near 1e-8, far below the model's truncation error.
/// Built once (in parallel) and then shared read-only across scan points.
#[derive(Debug, Clone)]
pub struct SMatrixInterpolant {
    p_lo: f64,
    p_hi: f64,
    re: Vec<CubicSpline>,
    im: Vec<CubicSpline>,
}

/// Default node spacing of [`SMatrixInterpolant`].
pub const INTERPOLANT_STEP: f64 = 0.002;

impl SMatrixInterpolant {
    pub fn build(pulse: &PulseSpec, p_lo: f64, p_hi: f64, step: f64) -> Result<Self> {
        assert!(p_hi > p_lo && step > 0.0, "empty interpolation range");
        // Natural splines flatten curvature in their first and last intervals, so the
        // node range is padded past the requested one (staying inside the zone) and
        // only the requested range is exposed through covers()/eval().
        let pad = 6.0 * step;
        let lo = (p_lo - pad).max(-1.0 + step);
        let hi = (p_hi + pad).min(1.0 - step);
        let n = ((hi - lo) / step).ceil() as usize + 1;
        let n = n.max(4);
        let ps: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        let mats: Vec<SMatrix5> = ps
            .par_iter()
            .map(|&p| pulse_smatrix(QuasiMomentum::new(p)?, pulse))
            .collect::<Result<_>>()?;
        let mut re = Vec::with_capacity(25);
        let mut im = Vec::with_capacity(25);
        for i in 0..5 {
            for j in 0..5 {
                let res: Vec<f64> = mats.iter().map(|m| m.entries[i][j].re).collect();
                let ims: Vec<f64> = mats.iter().map(|m| m.entries[i][j].im).collect();
                re.push(CubicSpline::new(ps.clone(), res)?);
                im.push(CubicSpline::new(ps.clone(), ims)?);
            }
        }
        Ok(Self { p_lo, p_hi, re, im })
    }

    pub fn covers(&self, p: f64) -> bool {
        (self.p_lo..=self.p_hi).contains(&p)
    }

    pub fn eval(&self, p: f64) -> Result<SMatrix5> {
        if !self.covers(p) {
            return Err(DbdError::DriftOutOfZone { p });
        }
        let mut entries = [[C64::new(0.0, 0.0); 5]; 5];
        for i in 0..5 {
            for j in 0..5 {
                let k = i * 5 + j;
                entries[i][j] = C64::new(self.re[k].value(p), self.im[k].value(p));
            }
        }
        Ok(SMatrix5 { entries, p })
    }
}
