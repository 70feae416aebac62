//! Mach-Zehnder composition of pulse S-matrices, fringe scans, and contrast.
//!
//! A full interferometer at interrogation time T is the time-ordered product
//! S_tot = B(p3) U(p2) M(p2) U(p1) B(p1), where p1 = p, p2 = p + m g T and
//! p3 = p + 2 m g T are the quasi-momenta the packet has drifted to by each pulse
//! centre, and U is the diagonal free-fall propagator over one centre-to-centre gap.
//! Port populations follow by averaging |S_tot,i0|^2 over the packet's momentum
//! density; the fringe is the conjugate-port signal P(+2) + P(-2) against T, and
//! contrast is the population difference between its first non-trivial maximum and
//! the following minimum.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{DbdError, Result};
use crate::five_level::{
    mat_mul, pulse_smatrix, Mat5, QuasiMomentum, SMatrix5, SMatrixInterpolant,
    INTERPOLANT_STEP, LEVEL_OFFSETS,
};
use crate::pulses::{PulseSpec, StrategyPreset, WINDOW_SIGMAS};
use crate::quadrature::gauss_legendre;
use crate::units::MASS;

/// Default Gauss-Legendre node count for momentum averages. Treated as a floor:
/// the effective count grows with T sigma_p, see [`effective_nodes`].
pub const DEFAULT_QUADRATURE_NODES: usize = 65;

const MIN_QUADRATURE_NODES: usize = 33;
const QUADRATURE_TOL: f64 = 1e-5;

/// Quadrature nodes needed to resolve the composed port populations at
/// interrogation time `t` over a packet of width `sigma_p`.
///
/// Parasitic interferometer paths pick up a relative phase of up to 8 p t per
/// gap, so the populations oscillate in p at a rate of up to 16 t across the
/// +-5 sigma integration span. Resolving that takes about 67 t sigma_p nodes
/// (measured); the count below adds a safety margin and the doubling check in
/// the callers still guards the result.
fn effective_nodes(requested: usize, t: f64, sigma_p: f64) -> usize {
    let oscillation = (70.0 * t * sigma_p) as usize + 34;
    requested.max(oscillation) | 1
}

/// Largest fringe-phase step between adjacent T samples before a scan is rejected.
pub const PHASE_STEP_LIMIT: f64 = PI / 8.0;

/// Diagonal free propagator over one gap of length t: the level at p + 2n gains the
/// phase (m g t^2 q + t q^2) / (2 m hbar) with q its quasi-momentum at the gap start.
#[derive(Debug, Clone)]
pub struct FreePropagatorDiag {
    pub phases: [C64; 5],
    pub p: f64,
    pub t: f64,
    pub g: f64,
}

impl FreePropagatorDiag {
    pub fn new(p: f64, t: f64, g: f64) -> Self {
        let mut phases = [C64::new(0.0, 0.0); 5];
        for (i, n) in LEVEL_OFFSETS.iter().enumerate() {
            let q = p + 2.0 * *n as f64;
            let phi = (MASS * g * t * t * q + t * q * q) / (2.0 * MASS);
            phases[i] = C64::from_polar(1.0, -phi);
        }
        Self { phases, p, t, g }
    }

    pub fn matrix(&self) -> Mat5 {
        let mut m = [[C64::new(0.0, 0.0); 5]; 5];
        for i in 0..5 {
            m[i][i] = self.phases[i];
        }
        m
    }
}

/// One interferometer setting: strategy pulses, acceleration, interrogation time,
/// and the incoming Gaussian momentum distribution.
#[derive(Debug, Clone)]
pub struct MZConfig {
    pub preset: StrategyPreset,
    pub g: f64,
    pub t_interrogation: f64,
    pub p0: f64,
    pub sigma_p: f64,
    pub eps_pol: f64,
    pub quadrature_nodes: usize,
}

impl MZConfig {
    pub fn new(preset: StrategyPreset, g: f64, t_interrogation: f64) -> Self {
        Self {
            preset,
            g,
            t_interrogation,
            p0: 0.0,
            sigma_p: 0.05,
            eps_pol: 0.0,
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
        }
    }

    /// Shortest interrogation time that keeps the pulse windows disjoint.
    pub fn min_interrogation(&self) -> f64 {
        WINDOW_SIGMAS * (self.preset.bs.envelope.tau + self.preset.mirror.envelope.tau)
    }

    fn validate_packet(&self) -> Result<()> {
        if self.sigma_p <= 0.0 {
            return Err(DbdError::NonPositivePulseParameter {
                name: "sigma_p",
                value: self.sigma_p,
            });
        }
        let reach = self.p0.abs() + 5.0 * self.sigma_p;
        if reach >= 1.0 {
            return Err(DbdError::PacketOutsideZone { reach });
        }
        if self.quadrature_nodes < MIN_QUADRATURE_NODES {
            return Err(DbdError::QuadratureTooFewNodes(self.quadrature_nodes));
        }
        Ok(())
    }
}

fn drifted_momenta(g: f64, p: f64, t: f64) -> Result<(f64, f64, f64)> {
    if t <= 0.0 {
        return Err(DbdError::NonPositiveTimeStep(t));
    }
    let p2 = p + MASS * g * t;
    let p3 = p + 2.0 * MASS * g * t;
    for q in [p2, p3] {
        if q.abs() >= 1.0 {
            return Err(DbdError::DriftOutOfZone { p: q });
        }
    }
    Ok((p, p2, p3))
}

/// Composes beam splitter, mirror, and final beam splitter with the two free-fall
/// propagators; the drifted quasi-momenta are taken from the pulse matrices.
pub fn compose_mz(b1: &SMatrix5, m: &SMatrix5, b2: &SMatrix5, g: f64, t: f64) -> SMatrix5 {
    let u1 = FreePropagatorDiag::new(b1.p, t, g).matrix();
    let u2 = FreePropagatorDiag::new(m.p, t, g).matrix();
    let entries = mat_mul(
        &b2.entries,
        &mat_mul(&u2, &mat_mul(&m.entries, &mat_mul(&u1, &b1.entries))),
    );
    SMatrix5 { entries, p: b1.p }
}

/// Full Mach-Zehnder S-matrix at input quasi-momentum p, integrating each pulse
/// directly. Fails when the gravitational drift pushes any pulse's quasi-momentum
/// out of the first Brillouin zone.
pub fn total_smatrix(g: f64, p: f64, t: f64, preset: &StrategyPreset) -> Result<SMatrix5> {
    let (p1, p2, p3) = drifted_momenta(g, p, t)?;
    let b1 = pulse_smatrix(QuasiMomentum::new(p1)?, &preset.bs)?;
    let m = pulse_smatrix(QuasiMomentum::new(p2)?, &preset.mirror)?;
    let b2 = pulse_smatrix(QuasiMomentum::new(p3)?, &preset.bs)?;
    Ok(compose_mz(&b1, &m, &b2, g, t))
}

fn port_row(s: &SMatrix5) -> [f64; 5] {
    let mut ports = [0.0; 5];
    for (i, port) in ports.iter_mut().enumerate() {
        *port = s.entry(i, 0).norm_sqr();
    }
    ports
}

/// Gauss-Legendre nodes over p0 +- 5 sigma_p with the Gaussian density folded into
/// the weights.
fn packet_nodes(p0: f64, sigma_p: f64, nodes: usize) -> Vec<(f64, f64)> {
    let (xs, ws) = gauss_legendre(nodes);
    let half = 5.0 * sigma_p;
    xs.iter()
        .zip(&ws)
        .map(|(x, w)| {
            let p = p0 + half * x;
            let density = (-0.5 * ((p - p0) / sigma_p).powi(2)).exp()
                / (sigma_p * (2.0 * PI).sqrt());
            (p, w * half * density)
        })
        .collect()
}

fn direct_pass(preset: &StrategyPreset, config: &MZConfig, nodes: usize) -> Result<[f64; 5]> {
    let terms: Vec<Result<[f64; 5]>> = packet_nodes(config.p0, config.sigma_p, nodes)
        .par_iter()
        .map(|&(p, w)| {
            let s = total_smatrix(config.g, p, config.t_interrogation, preset)?;
            let row = port_row(&s);
            Ok(row.map(|v| w * v))
        })
        .collect();
    let mut ports = [0.0; 5];
    for term in terms {
        let row = term?;
        for (acc, v) in ports.iter_mut().zip(row) {
            *acc += v;
        }
    }
    Ok(ports)
}

fn max_port_change(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Port populations {0, +2, -2, +4, -4} of one interferometer setting, averaged over
/// the packet's momentum density by Gauss-Legendre quadrature. The node count is
/// doubled once and the run is rejected if the populations have not converged.
pub fn port_populations_5ls(config: &MZConfig) -> Result<[f64; 5]> {
    config.validate_packet()?;
    let min_t = config.min_interrogation();
    if config.t_interrogation <= min_t {
        return Err(DbdError::InterrogationTooShort { t: config.t_interrogation, min_t });
    }
    let preset = config.preset.with_eps_pol(config.eps_pol)?;
    let nodes = effective_nodes(
        config.quadrature_nodes,
        config.t_interrogation,
        config.sigma_p,
    );
    let coarse = direct_pass(&preset, config, nodes)?;
    let fine = direct_pass(&preset, config, 2 * nodes + 1)?;
    let change = max_port_change(&coarse, &fine);
    if change > QUADRATURE_TOL {
        return Err(DbdError::QuadratureNotConverged { change });
    }
    Ok(fine)
}

/// Conjugate-port fringe sampled over interrogation times.
#[derive(Debug, Clone)]
pub struct FringeSignal {
    pub ts: Vec<f64>,
    pub ports: Vec<[f64; 5]>,
}

impl FringeSignal {
    /// Signal port P(+2) + P(-2).
    pub fn conjugate(&self) -> Vec<f64> {
        self.ports.iter().map(|p| p[1] + p[2]).collect()
    }

    /// Population retained in the p = 0 port.
    pub fn retained(&self) -> Vec<f64> {
        self.ports.iter().map(|p| p[0]).collect()
    }
}

/// Pulse S-matrices interpolated over the momentum span a scan touches; built once,
/// then shared read-only across scan points. The final splitter normally reuses the
/// first one's interpolant; it gets its own when the two pulses differ, as in
/// lattice-depth fluctuation studies.
pub struct ScanCache {
    bs1: SMatrixInterpolant,
    mirror: SMatrixInterpolant,
    bs2: Option<SMatrixInterpolant>,
}

impl ScanCache {
    /// Covers quadrature nodes over [p_lo, p_hi] plus the gravitational drift
    /// accumulated up to t_hi.
    pub fn build(preset: &StrategyPreset, g: f64, p_lo: f64, p_hi: f64, t_hi: f64) -> Result<Self> {
        let (lo, hi) = drifted_span(g, p_lo, p_hi, t_hi);
        Ok(Self {
            bs1: SMatrixInterpolant::build(&preset.bs, lo, hi, INTERPOLANT_STEP)?,
            mirror: SMatrixInterpolant::build(&preset.mirror, lo, hi, INTERPOLANT_STEP)?,
            bs2: None,
        })
    }

    /// As [`ScanCache::build`] but with three independent pulses, taken as given
    /// (no polarization-error stamping).
    pub fn build_with_pulses(
        bs1: &PulseSpec,
        mirror: &PulseSpec,
        bs2: &PulseSpec,
        g: f64,
        p_lo: f64,
        p_hi: f64,
        t_hi: f64,
    ) -> Result<Self> {
        let (lo, hi) = drifted_span(g, p_lo, p_hi, t_hi);
        Ok(Self {
            bs1: SMatrixInterpolant::build(bs1, lo, hi, INTERPOLANT_STEP)?,
            mirror: SMatrixInterpolant::build(mirror, lo, hi, INTERPOLANT_STEP)?,
            bs2: Some(SMatrixInterpolant::build(bs2, lo, hi, INTERPOLANT_STEP)?),
        })
    }

    fn total_smatrix(&self, g: f64, p: f64, t: f64) -> Result<SMatrix5> {
        let (p1, p2, p3) = drifted_momenta(g, p, t)?;
        let b1 = self.bs1.eval(p1)?;
        let m = self.mirror.eval(p2)?;
        let b2 = self.bs2.as_ref().unwrap_or(&self.bs1).eval(p3)?;
        Ok(compose_mz(&b1, &m, &b2, g, t))
    }

    fn pass(&self, config: &MZConfig, t: f64, nodes: usize) -> Result<[f64; 5]> {
        let mut ports = [0.0; 5];
        for (p, w) in packet_nodes(config.p0, config.sigma_p, nodes) {
            let row = port_row(&self.total_smatrix(config.g, p, t)?);
            for (acc, v) in ports.iter_mut().zip(row) {
                *acc += w * v;
            }
        }
        Ok(ports)
    }

    fn ports_at(&self, config: &MZConfig, t: f64) -> Result<[f64; 5]> {
        let nodes = effective_nodes(config.quadrature_nodes, t, config.sigma_p);
        let coarse = self.pass(config, t, nodes)?;
        let fine = self.pass(config, t, 2 * nodes + 1)?;
        let change = max_port_change(&coarse, &fine);
        if change > QUADRATURE_TOL {
            return Err(DbdError::QuadratureNotConverged { change });
        }
        Ok(fine)
    }
}

fn drifted_span(g: f64, p_lo: f64, p_hi: f64, t_hi: f64) -> (f64, f64) {
    let drift = 2.0 * MASS * g * t_hi;
    (p_lo + drift.min(0.0), p_hi + drift.max(0.0))
}

fn validate_scan(config: &MZConfig, t_lo: f64, t_hi: f64, n_points: usize) -> Result<Vec<f64>> {
    config.validate_packet()?;
    let min_t = config.min_interrogation();
    if t_lo <= min_t {
        return Err(DbdError::InterrogationTooShort { t: t_lo, min_t });
    }
    let phase_span = 4.0 * config.g * (t_hi * t_hi - t_lo * t_lo);
    if !(phase_span >= 2.0 * PI) {
        return Err(DbdError::ScanRangeTooShort { t_lo, t_hi, phase_span });
    }
    let h = (t_hi - t_lo) / (n_points.max(2) - 1) as f64;
    let phase_step = 4.0 * config.g * h * (2.0 * t_hi - h);
    if n_points < 2 || phase_step >= PHASE_STEP_LIMIT {
        let h_max = PHASE_STEP_LIMIT / (8.0 * config.g * t_hi);
        let required = ((t_hi - t_lo) / h_max).ceil() as usize + 1;
        return Err(DbdError::ScanUndersampled { phase_step, required });
    }
    Ok((0..n_points)
        .map(|k| t_lo + (t_hi - t_lo) * k as f64 / (n_points - 1) as f64)
        .collect())
}

fn scan_with_cache(
    config: &MZConfig,
    cache: &ScanCache,
    ts: Vec<f64>,
) -> Result<FringeSignal> {
    let ports: Vec<[f64; 5]> = ts
        .par_iter()
        .map(|&t| cache.ports_at(config, t))
        .collect::<Result<_>>()?;
    Ok(FringeSignal { ts, ports })
}

/// Samples the conjugate-port fringe over [t_lo, t_hi]. The range must span at
/// least one full fringe of cos(4 g T^2) and the sampling must keep adjacent phase
/// steps below pi/8.
pub fn t_scan(config: &MZConfig, t_lo: f64, t_hi: f64, n_points: usize) -> Result<FringeSignal> {
    let ts = validate_scan(config, t_lo, t_hi, n_points)?;
    let preset = config.preset.with_eps_pol(config.eps_pol)?;
    let cache = ScanCache::build(
        &preset,
        config.g,
        config.p0 - 5.0 * config.sigma_p,
        config.p0 + 5.0 * config.sigma_p,
        t_hi,
    )?;
    scan_with_cache(config, &cache, ts)
}

/// [`t_scan`] over an explicit pulse triple, used when the three pulses are not the
/// preset's BS-M-BS pattern. The pulses are taken as given; the config supplies the
/// acceleration, packet, and scan bookkeeping only.
pub fn t_scan_with_pulses(
    config: &MZConfig,
    bs1: &PulseSpec,
    mirror: &PulseSpec,
    bs2: &PulseSpec,
    t_lo: f64,
    t_hi: f64,
    n_points: usize,
) -> Result<FringeSignal> {
    let ts = validate_scan(config, t_lo, t_hi, n_points)?;
    let cache = ScanCache::build_with_pulses(
        bs1,
        mirror,
        bs2,
        config.g,
        config.p0 - 5.0 * config.sigma_p,
        config.p0 + 5.0 * config.sigma_p,
        t_hi,
    )?;
    scan_with_cache(config, &cache, ts)
}

/// Contrast of one fringe: population difference between the first non-trivial
/// maximum of the conjugate signal and the minimum that follows it.
#[derive(Debug, Clone, Copy)]
pub struct Contrast {
    pub contrast: f64,
    pub t_max: f64,
    pub t_min: f64,
    pub p_max: f64,
    pub p_min: f64,
}

impl Contrast {
    /// Fringe offset A = P(T_max) + P(T_min); 1 only for ideal operations.
    pub fn offset(&self) -> f64 {
        self.p_max + self.p_min
    }
}

fn refine_extremum(ts: &[f64], s: &[f64], k: usize) -> (f64, f64) {
    let d2 = s[k + 1] - 2.0 * s[k] + s[k - 1];
    if d2.abs() < 1e-300 {
        return (ts[k], s[k]);
    }
    let x = 0.5 * (s[k - 1] - s[k + 1]) / d2;
    let h = ts[k + 1] - ts[k];
    let diff = s[k + 1] - s[k - 1];
    (ts[k] + x * h, s[k] - diff * diff / (8.0 * d2))
}

/// Locates the first maximum of P(+2) + P(-2) and the minimum after it by discrete
/// sign change of the derivative, refined on a local quadratic.
pub fn extract_contrast(signal: &FringeSignal) -> Result<Contrast> {
    let s = signal.conjugate();
    let ts = &signal.ts;
    let n = s.len();

    let mut i_max = None;
    for i in 1..n.saturating_sub(1) {
        if s[i] >= s[i - 1] && s[i] > s[i + 1] {
            i_max = Some(i);
            break;
        }
    }
    let i_max = i_max.ok_or(DbdError::NoExtremum { kind: "maximum" })?;

    let mut i_min = None;
    for i in (i_max + 1)..n.saturating_sub(1) {
        if s[i] <= s[i - 1] && s[i] < s[i + 1] {
            i_min = Some(i);
            break;
        }
    }
    let i_min = i_min.ok_or(DbdError::NoExtremum { kind: "minimum" })?;

    let (t_max, p_max) = refine_extremum(ts, &s, i_max);
    let (t_min, p_min) = refine_extremum(ts, &s, i_min);
    Ok(Contrast { contrast: p_max - p_min, t_max, t_min, p_max, p_min })
}

/// T-scan window covering the first full fringe at acceleration g, sampled with
/// phase steps near pi/12.
#[derive(Debug, Clone, Copy)]
pub struct ScanWindow {
    pub t_lo: f64,
    pub t_hi: f64,
    pub n_points: usize,
}

pub fn fringe_window(preset: &StrategyPreset, g: f64) -> Result<ScanWindow> {
    if g <= 0.0 {
        return Err(DbdError::NonPositivePulseParameter { name: "g", value: g });
    }
    let min_t = WINDOW_SIGMAS * (preset.bs.envelope.tau + preset.mirror.envelope.tau);
    let t_lo = 1.02 * min_t;
    let phi_lo = 4.0 * g * t_lo * t_lo;
    let t_hi = ((phi_lo + 2.75 * PI) / (4.0 * g)).sqrt();
    let h = PI / (96.0 * g * t_hi);
    let n_points = ((t_hi - t_lo) / h).ceil() as usize + 1;
    Ok(ScanWindow { t_lo, t_hi, n_points })
}

/// Swept parameter of a contrast scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanAxis {
    SigmaP,
    P0,
    EpsPol,
}

#[derive(Debug, Clone, Copy)]
pub struct ContrastPoint {
    pub value: f64,
    pub contrast: Contrast,
}

fn axis_config(template: &MZConfig, axis: ScanAxis, value: f64) -> MZConfig {
    let mut config = template.clone();
    match axis {
        ScanAxis::SigmaP => config.sigma_p = value,
        ScanAxis::P0 => config.p0 = value,
        ScanAxis::EpsPol => config.eps_pol = value,
    }
    config
}

/// Contrast against one swept parameter, all other settings taken from the
/// template. Momentum-axis scans share one S-matrix cache across values; a
/// polarization scan changes the pulses themselves and rebuilds per value.
pub fn contrast_scan(
    template: &MZConfig,
    axis: ScanAxis,
    values: &[f64],
    window: &ScanWindow,
) -> Result<Vec<ContrastPoint>> {
    if axis == ScanAxis::EpsPol {
        return values
            .iter()
            .map(|&value| {
                let config = axis_config(template, axis, value);
                let signal = t_scan(&config, window.t_lo, window.t_hi, window.n_points)?;
                Ok(ContrastPoint { value, contrast: extract_contrast(&signal)? })
            })
            .collect();
    }

    let mut p_lo = f64::MAX;
    let mut p_hi = f64::MIN;
    for &value in values {
        let config = axis_config(template, axis, value);
        config.validate_packet()?;
        p_lo = p_lo.min(config.p0 - 5.0 * config.sigma_p);
        p_hi = p_hi.max(config.p0 + 5.0 * config.sigma_p);
    }
    let preset = template.preset.with_eps_pol(template.eps_pol)?;
    let cache = ScanCache::build(&preset, template.g, p_lo, p_hi, window.t_hi)?;
    values
        .iter()
        .map(|&value| {
            let config = axis_config(template, axis, value);
            let ts = validate_scan(&config, window.t_lo, window.t_hi, window.n_points)?;
            let signal = scan_with_cache(&config, &cache, ts)?;
            Ok(ContrastPoint { value, contrast: extract_contrast(&signal)? })
        })
        .collect()
}

/// Ideal 50/50 double-Bragg splitter: |0> goes to -i/sqrt(2) (|+2> + |-2>), the
/// conjugate ports mix with amplitude 1/2, and the +-4 levels are untouched.
pub fn ideal_beam_splitter() -> Mat5 {
    let mut b = [[C64::new(0.0, 0.0); 5]; 5];
    let cross = C64::new(0.0, -FRAC_1_SQRT_2);
    b[0][1] = cross;
    b[0][2] = cross;
    b[1][0] = cross;
    b[2][0] = cross;
    b[1][1] = C64::new(0.5, 0.0);
    b[2][2] = C64::new(0.5, 0.0);
    b[1][2] = C64::new(-0.5, 0.0);
    b[2][1] = C64::new(-0.5, 0.0);
    b[3][3] = C64::new(1.0, 0.0);
    b[4][4] = C64::new(1.0, 0.0);
    b
}

/// Ideal mirror: perfect swap of the +-2 ports (with a sign), identity on +-4.
pub fn ideal_mirror() -> Mat5 {
    let mut m = [[C64::new(0.0, 0.0); 5]; 5];
    m[0][0] = C64::new(-1.0, 0.0);
    m[1][2] = C64::new(-1.0, 0.0);
    m[2][1] = C64::new(-1.0, 0.0);
    m[3][3] = C64::new(1.0, 0.0);
    m[4][4] = C64::new(1.0, 0.0);
    m
}

/// Conjugate-port population of an ideal interferometer, (1 - cos(4 g T^2)) / 2.
pub fn ideal_fringe_population(g: f64, t: f64) -> f64 {
    0.5 * (1.0 - (4.0 * g * t * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulses::Strategy;
    use approx::assert_abs_diff_eq;

    fn identity_smatrix(p: f64) -> SMatrix5 {
        let mut entries = [[C64::new(0.0, 0.0); 5]; 5];
        for (i, row) in entries.iter_mut().enumerate() {
            row[i] = C64::new(1.0, 0.0);
        }
        SMatrix5 { entries, p }
    }

    #[test]
    fn free_phases_are_unimodular_and_follow_the_drift_formula() {
        let (p, t, g) = (0.1, 7.0, 0.001);
        let u = FreePropagatorDiag::new(p, t, g);
        for (i, n) in LEVEL_OFFSETS.iter().enumerate() {
            let q = p + 2.0 * *n as f64;
            let phi = (MASS * g * t * t * q + t * q * q) / (2.0 * MASS);
            assert_abs_diff_eq!(u.phases[i].norm(), 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(u.phases[i].arg(), C64::from_polar(1.0, -phi).arg(), epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_pulses_leave_a_diagonal_total() {
        let (g, t) = (0.002, 9.0);
        let b = identity_smatrix(0.05);
        let m = identity_smatrix(0.05 + MASS * g * t);
        let s = compose_mz(&b, &m, &b, g, t);
        for i in 0..5 {
            for j in 0..5 {
                if i == j {
                    assert_abs_diff_eq!(s.entries[i][j].norm(), 1.0, epsilon = 1e-14);
                } else {
                    assert_eq!(s.entries[i][j], C64::new(0.0, 0.0));
                }
            }
        }
        let u1 = FreePropagatorDiag::new(b.p, t, g);
        let u2 = FreePropagatorDiag::new(m.p, t, g);
        for i in 0..5 {
            let want = u2.phases[i] * u1.phases[i];
            assert_abs_diff_eq!((s.entries[i][i] - want).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_g_total_is_the_plain_matrix_product() {
        let preset = Strategy::Conventional.preset().unwrap();
        let p = QuasiMomentum::new(0.04).unwrap();
        let t = 8.0;
        let b = pulse_smatrix(p, &preset.bs).unwrap();
        let m = pulse_smatrix(p, &preset.mirror).unwrap();
        let u = FreePropagatorDiag::new(0.04, t, 0.0).matrix();
        let want = mat_mul(&b.entries, &mat_mul(&u, &mat_mul(&m.entries, &mat_mul(&u, &b.entries))));
        let got = total_smatrix(0.0, 0.04, t, &preset).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_abs_diff_eq!((got.entries[i][j] - want[i][j]).norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ideal_composition_reproduces_the_closed_form_fringe() {
        let g = 5.0e-4;
        let bs = ideal_beam_splitter();
        let mirror = ideal_mirror();
        for &t in &[6.0, 11.0, 23.0, 39.6, 56.0] {
            let b1 = SMatrix5 { entries: bs, p: 0.0 };
            let m = SMatrix5 { entries: mirror, p: MASS * g * t };
            let b2 = SMatrix5 { entries: bs, p: 2.0 * MASS * g * t };
            let s = compose_mz(&b1, &m, &b2, g, t);
            let conjugate = s.entry(1, 0).norm_sqr() + s.entry(2, 0).norm_sqr();
            let retained = s.entry(0, 0).norm_sqr();
            assert_abs_diff_eq!(conjugate, ideal_fringe_population(g, t), epsilon = 1e-12);
            assert_abs_diff_eq!(conjugate + retained, 1.0, epsilon = 1e-12);
        }
        let t_pi = (PI / (4.0 * g)).sqrt();
        let b1 = SMatrix5 { entries: bs, p: 0.0 };
        let m = SMatrix5 { entries: mirror, p: MASS * g * t_pi };
        let b2 = SMatrix5 { entries: bs, p: 2.0 * MASS * g * t_pi };
        let s = compose_mz(&b1, &m, &b2, g, t_pi);
        assert_abs_diff_eq!(
            s.entry(1, 0).norm_sqr() + s.entry(2, 0).norm_sqr(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn drift_out_of_zone_is_reported() {
        let preset = Strategy::Conventional.preset().unwrap();
        assert!(matches!(
            total_smatrix(0.01, 0.9, 50.0, &preset),
            Err(DbdError::DriftOutOfZone { .. })
        ));
    }

    #[test]
    fn ds_fringe_leading_phase_matches_4_g_t_squared() {
        let preset = Strategy::DetuningSweep.preset().unwrap();
        let g = 3.57e-4;
        let window = fringe_window(&preset, g).unwrap();
        let ts: Vec<f64> = (0..window.n_points)
            .map(|k| {
                window.t_lo + (window.t_hi - window.t_lo) * k as f64 / (window.n_points - 1) as f64
            })
            .collect();
        let signal: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let s = total_smatrix(g, 0.0, t, &preset).unwrap();
                s.entry(1, 0).norm_sqr() + s.entry(2, 0).norm_sqr()
            })
            .collect();

        // Least-squares fit of c + a cos(phi) + b sin(phi) with phi = 4 g T^2; the
        // leading component of the plane-wave fringe must sit at phase delta = 0.
        let mut ata = [[0.0f64; 3]; 3];
        let mut aty = [0.0f64; 3];
        for (&t, &s) in ts.iter().zip(&signal) {
            let phi = 4.0 * g * t * t;
            let row = [1.0, phi.cos(), phi.sin()];
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += row[i] * row[j];
                }
                aty[i] += row[i] * s;
            }
        }
        let det = |m: &[[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(&ata);
        let mut coeff = [0.0f64; 3];
        for k in 0..3 {
            let mut m = ata;
            for row in 0..3 {
                m[row][k] = aty[row];
            }
            coeff[k] = det(&m) / d;
        }
        let (a, b) = (coeff[1], coeff[2]);
        let amplitude = (a * a + b * b).sqrt();
        let delta = b.atan2(-a);
        assert!(amplitude > 0.3, "fringe amplitude {amplitude} too small");
        assert!(delta.abs() < 0.03, "leading-phase offset {delta} rad");
    }

    #[test]
    fn ports_are_parity_symmetric_at_zero_mean_momentum() {
        let preset = Strategy::DetuningSweep.preset().unwrap();
        let mut config = MZConfig::new(preset, 0.0, 20.0);
        config.eps_pol = 0.03;
        let ports = port_populations_5ls(&config).unwrap();
        assert_abs_diff_eq!(ports[1], ports[2], epsilon = 1e-8);
        assert_abs_diff_eq!(ports[3], ports[4], epsilon = 1e-8);
        let total: f64 = ports.iter().sum();
        assert!((total - 1.0).abs() < 5e-3, "population bookkeeping off: {total}");
    }

    #[test]
    fn scan_validation_rejects_bad_ranges() {
        let preset = Strategy::DetuningSweep.preset().unwrap();
        let config = MZConfig::new(preset, 3.57e-4, 20.0);
        assert!(matches!(
            t_scan(&config, 2.0, 70.0, 64),
            Err(DbdError::InterrogationTooShort { .. })
        ));
        assert!(matches!(
            t_scan(&config, 6.0, 20.0, 64),
            Err(DbdError::ScanRangeTooShort { .. })
        ));
        match t_scan(&config, 6.0, 80.0, 5) {
            Err(DbdError::ScanUndersampled { required, .. }) => assert!(required > 5),
            other => panic!("expected undersampled error, got {other:?}"),
        }
    }

    #[test]
    fn cached_scan_matches_direct_integration() {
        let preset = Strategy::DetuningSweep.preset().unwrap();
        let g = 3.57e-4;
        let window = fringe_window(&preset, g).unwrap();
        let mut config = MZConfig::new(preset, g, 0.0);
        config.sigma_p = 0.05;
        let signal = t_scan(&config, window.t_lo, window.t_hi, window.n_points).unwrap();

        config.t_interrogation = signal.ts[10];
        let direct = port_populations_5ls(&config).unwrap();
        for i in 0..5 {
            assert_abs_diff_eq!(signal.ports[10][i], direct[i], epsilon = 1e-6);
        }
        for ports in &signal.ports {
            let total: f64 = ports.iter().sum();
            assert!((total - 1.0).abs() < 5e-3);
        }
    }

    #[test]
    fn ideal_fringe_contrast_extraction_is_exact() {
        let g = 3.57e-4;
        let (t_lo, t_hi, n) = (6.0, 80.0, 200);
        let ts: Vec<f64> = (0..n).map(|k| t_lo + (t_hi - t_lo) * k as f64 / (n - 1) as f64).collect();
        let ports: Vec<[f64; 5]> = ts
            .iter()
            .map(|&t| {
                let p = ideal_fringe_population(g, t);
                [1.0 - p, 0.5 * p, 0.5 * p, 0.0, 0.0]
            })
            .collect();
        let contrast = extract_contrast(&FringeSignal { ts, ports }).unwrap();
        assert_abs_diff_eq!(contrast.contrast, 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(4.0 * g * contrast.t_max * contrast.t_max, PI, epsilon = 0.02);
        assert_abs_diff_eq!(
            4.0 * g * contrast.t_min * contrast.t_min,
            2.0 * PI,
            epsilon = 0.02
        );
        assert_abs_diff_eq!(contrast.offset(), 1.0, epsilon = 1e-4);
    }

    #[test]
    fn constant_signal_has_no_extremum() {
        let ts: Vec<f64> = (0..50).map(|k| 6.0 + k as f64).collect();
        let ports = vec![[0.5, 0.2, 0.2, 0.0, 0.0]; 50];
        assert!(matches!(
            extract_contrast(&FringeSignal { ts, ports }),
            Err(DbdError::NoExtremum { kind: "maximum" })
        ));
    }

    #[test]
    fn contrast_scan_shares_windows_across_packet_widths() {
        let preset = Strategy::DetuningSweep.preset().unwrap();
        let g = 3.57e-4;
        let window = fringe_window(&preset, g).unwrap();
        let template = MZConfig::new(preset, g, 0.0);
        let points =
            contrast_scan(&template, ScanAxis::SigmaP, &[0.02, 0.05], &window).unwrap();
        assert_eq!(points.len(), 2);
        assert!(points[0].contrast.contrast > points[1].contrast.contrast);
        assert!(points[0].contrast.contrast <= 1.0);
        for point in &points {
            assert!(point.contrast.t_max < point.contrast.t_min);
        }
    }
}
