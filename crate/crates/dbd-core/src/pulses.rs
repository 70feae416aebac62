//! Light pulses: Gaussian Rabi envelopes, detuning profiles, laser-phase accumulation,
//! and the four named strategy presets.
//!
//! A pulse drives the lattice coupling 2 Omega(t) cos(2 z) [cos Phi_L(t) + eps_pol].
//! The carrier-envelope phase is fixed to zero at the pulse centre, so
//! Phi_L(t) = [4 + Delta(t)] (t - t0); the 4 omega_rec term is the first-order double
//! Bragg resonance and Delta is the detuning from it.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{DbdError, Result};
use crate::spline::CubicSpline;

/// Gaussian Rabi envelope Omega(t) = omega_peak exp(-(t-t0)^2 / 2 tau^2), truncated to
/// zero outside the window |t - t0| > 5 tau.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEnvelope {
    pub omega_peak: f64,
    pub tau: f64,
    pub t0: f64,
}

/// Half-length of the truncation window in units of tau (total pulse length 10 tau).
pub const WINDOW_SIGMAS: f64 = 5.0;

impl GaussianEnvelope {
    pub fn new(omega_peak: f64, tau: f64, t0: f64) -> Result<Self> {
        if omega_peak <= 0.0 {
            return Err(DbdError::NonPositivePulseParameter {
                name: "omega_peak",
                value: omega_peak,
            });
        }
        if tau <= 0.0 {
            return Err(DbdError::NonPositivePulseParameter { name: "tau", value: tau });
        }
        Ok(Self { omega_peak, tau, t0 })
    }

    /// Envelope value, exactly zero outside the 10 tau window.
    pub fn value(&self, t: f64) -> f64 {
        self.value_at_offset(t - self.t0)
    }

    /// Envelope value at time offset s = t - t0 from the centre.
    pub fn value_at_offset(&self, s: f64) -> f64 {
        if s.abs() > WINDOW_SIGMAS * self.tau {
            0.0
        } else {
            self.omega_peak * (-0.5 * (s / self.tau).powi(2)).exp()
        }
    }

    pub fn window_start(&self) -> f64 {
        self.t0 - WINDOW_SIGMAS * self.tau
    }

    pub fn window_end(&self) -> f64 {
        self.t0 + WINDOW_SIGMAS * self.tau
    }
}

/// Detuning Delta(t) from the first-order resonance 4 omega_rec.
///
/// LinearSweep evaluates (alpha/tau)(t - t0) + beta with tau and t0 taken from the
/// owning envelope; Sampled profiles hold a natural cubic spline over times relative
/// to the pulse centre, zero outside the sampled range.
#[derive(Debug, Clone)]
pub enum DetuningProfile {
    Zero,
    Constant(f64),
    LinearSweep { alpha: f64, beta: f64 },
    Sampled(CubicSpline),
}

impl DetuningProfile {
    pub fn sampled(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Ok(Self::Sampled(CubicSpline::new(times, values)?))
    }
}

/// One light pulse: envelope, detuning profile, and polarization error.
#[derive(Debug, Clone)]
pub struct PulseSpec {
    pub envelope: GaussianEnvelope,
    pub detuning: DetuningProfile,
    pub eps_pol: f64,
}

impl PulseSpec {
    pub fn new(envelope: GaussianEnvelope, detuning: DetuningProfile, eps_pol: f64) -> Result<Self> {
        if !(0.0..=0.2).contains(&eps_pol) {
            return Err(DbdError::PolarizationOutOfRange(eps_pol));
        }
        Ok(Self { envelope, detuning, eps_pol })
    }

    /// Rabi rate Omega(t), zero outside the pulse window.
    pub fn drive(&self, t: f64) -> f64 {
        self.envelope.value(t)
    }

    /// Rabi rate at time offset s = t - t0 from the pulse centre.
    pub fn drive_at_offset(&self, s: f64) -> f64 {
        self.envelope.value_at_offset(s)
    }

    /// Detuning Delta(t).
    pub fn detuning_value(&self, t: f64) -> f64 {
        self.detuning_at_offset(t - self.envelope.t0)
    }

    /// Detuning at time offset s = t - t0 from the pulse centre.
    pub fn detuning_at_offset(&self, s: f64) -> f64 {
        match &self.detuning {
            DetuningProfile::Zero => 0.0,
            DetuningProfile::Constant(d) => *d,
            DetuningProfile::LinearSweep { alpha, beta } => alpha / self.envelope.tau * s + beta,
            DetuningProfile::Sampled(spline) => spline.value(s),
        }
    }

    /// Laser phase Phi_L(t) = [4 + Delta(t)] (t - t0): the instantaneous frequency
    /// difference times the time from the pulse centre, zero at the centre by
    /// convention.
    pub fn laser_phase(&self, t: f64) -> f64 {
        self.laser_phase_at_offset(t - self.envelope.t0)
    }

    /// Laser phase at time offset s = t - t0 from the pulse centre.
    pub fn laser_phase_at_offset(&self, s: f64) -> f64 {
        (4.0 + self.detuning_at_offset(s)) * s
    }

    /// The same pulse translated so its envelope centre sits at new_t0. Detuning
    /// profiles are measured relative to the centre, so they move rigidly with it.
    pub fn recentered(&self, new_t0: f64) -> Self {
        let mut out = self.clone();
        out.envelope.t0 = new_t0;
        out
    }

    /// The same pulse with its peak Rabi rate multiplied by factor (> 0); used for
    /// lattice-depth fluctuation studies.
    pub fn scaled_amplitude(&self, factor: f64) -> Result<Self> {
        let mut out = self.clone();
        out.envelope =
            GaussianEnvelope::new(self.envelope.omega_peak * factor, self.envelope.tau, self.envelope.t0)?;
        Ok(out)
    }

    pub fn with_eps_pol(&self, eps_pol: f64) -> Result<Self> {
        Self::new(self.envelope.clone(), self.detuning.clone(), eps_pol)
    }

    pub fn window_start(&self) -> f64 {
        self.envelope.window_start()
    }

    pub fn window_end(&self) -> f64 {
        self.envelope.window_end()
    }
}

/// The four pulse strategies studied here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Conventional resonant pulses (no detuning).
    Conventional,
    /// Constant detuning on the beam-splitters.
    ConstantDetuning,
    /// Linear detuning sweeps on both pulses.
    DetuningSweep,
    /// Detuning-sweep beam-splitters plus the numerically optimized mirror.
    Oct,
}

pub const ALL_STRATEGIES: [Strategy; 4] = [
    Strategy::Conventional,
    Strategy::ConstantDetuning,
    Strategy::DetuningSweep,
    Strategy::Oct,
];

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Strategy::Conventional => "C-DBD",
            Strategy::ConstantDetuning => "CD-DBD",
            Strategy::DetuningSweep => "DS-DBD",
            Strategy::Oct => "OCT",
        };
        write!(f, "{name}")
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "c-dbd" | "cdbd" | "c" => Ok(Strategy::Conventional),
            "cd-dbd" | "cddbd" | "cd" => Ok(Strategy::ConstantDetuning),
            "ds-dbd" | "dsdbd" | "ds" => Ok(Strategy::DetuningSweep),
            "oct" => Ok(Strategy::Oct),
            other => Err(format!(
                "unknown strategy {other:?}; expected one of C-DBD, CD-DBD, DS-DBD, OCT"
            )),
        }
    }
}

/// Beam-splitter / mirror pulse pair of one strategy. The sequence is BS-M-BS with the
/// two splitters identical up to time translation.
#[derive(Debug, Clone)]
pub struct StrategyPreset {
    pub name: Strategy,
    pub bs: PulseSpec,
    pub mirror: PulseSpec,
}

/// Peak Rabi rate and width shared by all beam-splitters: Omega_BS = 2.0 omega_rec,
/// tau_BS = 0.47 / omega_rec.
pub const BS_GAUSSIAN: (f64, f64) = (2.0, 0.47);
/// Peak Rabi rate and width of the non-OCT mirrors: Omega_M = 2.89, tau_M = 0.64.
pub const MIRROR_GAUSSIAN: (f64, f64) = (2.89, 0.64);
/// Constant beam-splitter detuning of the CD strategy, 0.27 omega_rec.
pub const CD_BS_DETUNING: f64 = 0.27;
/// Sweep parameters (alpha, beta) of the DS beam-splitter.
pub const DS_BS_SWEEP: (f64, f64) = (0.37, 0.315);
/// Sweep parameters (alpha, beta) of the DS mirror.
pub const DS_MIRROR_SWEEP: (f64, f64) = (0.75, -4.0);
/// Gaussian parameters (omega_peak, tau, t0) of the optimized mirror.
pub const OCT_MIRROR_GAUSSIAN: (f64, f64, f64) = (2.502, 1.829, 3.879);

fn bs_pulse(detuning: DetuningProfile) -> PulseSpec {
    PulseSpec::new(
        GaussianEnvelope::new(BS_GAUSSIAN.0, BS_GAUSSIAN.1, 0.0).expect("valid constants"),
        detuning,
        0.0,
    )
    .expect("valid constants")
}

fn mirror_pulse(detuning: DetuningProfile) -> PulseSpec {
    PulseSpec::new(
        GaussianEnvelope::new(MIRROR_GAUSSIAN.0, MIRROR_GAUSSIAN.1, 0.0).expect("valid constants"),
        detuning,
        0.0,
    )
    .expect("valid constants")
}

impl Strategy {
    /// Tabulated preset pulses. The OCT mirror detuning only exists as data, so that
    /// preset must be built through [`Strategy::preset_with_oct_mirror`] or
    /// [`load_oct_mirror`]; requesting it here reports the missing profile.
    pub fn preset(self) -> Result<StrategyPreset> {
        let (bs, mirror) = match self {
            Strategy::Conventional => {
                (bs_pulse(DetuningProfile::Zero), mirror_pulse(DetuningProfile::Zero))
            }
            Strategy::ConstantDetuning => (
                bs_pulse(DetuningProfile::Constant(CD_BS_DETUNING)),
                mirror_pulse(DetuningProfile::Constant(0.0)),
            ),
            Strategy::DetuningSweep => (
                bs_pulse(DetuningProfile::LinearSweep {
                    alpha: DS_BS_SWEEP.0,
                    beta: DS_BS_SWEEP.1,
                }),
                mirror_pulse(DetuningProfile::LinearSweep {
                    alpha: DS_MIRROR_SWEEP.0,
                    beta: DS_MIRROR_SWEEP.1,
                }),
            ),
            Strategy::Oct => return Err(DbdError::OctProfileRequired),
        };
        Ok(StrategyPreset { name: self, bs, mirror })
    }

    /// The OCT preset: detuning-sweep beam-splitters around the supplied optimized
    /// mirror pulse.
    pub fn preset_with_oct_mirror(mirror: PulseSpec) -> StrategyPreset {
        let ds = Strategy::DetuningSweep.preset().expect("tabulated preset");
        StrategyPreset { name: Strategy::Oct, bs: ds.bs, mirror }
    }
}

impl StrategyPreset {
    /// Both pulses with the polarization error replaced.
    pub fn with_eps_pol(&self, eps_pol: f64) -> Result<Self> {
        Ok(Self {
            name: self.name,
            bs: self.bs.with_eps_pol(eps_pol)?,
            mirror: self.mirror.with_eps_pol(eps_pol)?,
        })
    }
}

fn parse_columns(content: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (index, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split([',', ' ', '\t']).filter(|f| !f.is_empty()).collect();
        let parsed: Option<(f64, f64)> = match fields.as_slice() {
            [a, b] => match (a.parse(), b.parse()) {
                (Ok(t), Ok(v)) => Some((t, v)),
                _ => None,
            },
            _ => None,
        };
        match parsed {
            Some((t, v)) => {
                times.push(t);
                values.push(v);
            }
            None => {
                return Err(DbdError::ProfileParse {
                    line: index + 1,
                    content: raw.to_string(),
                })
            }
        }
    }
    Ok((times, values))
}

/// Parses a two-column sampled detuning profile (time relative to the pulse centre,
/// detuning). Columns may be separated by whitespace or commas; '#' lines are ignored.
pub fn parse_sampled_detuning(content: &str) -> Result<DetuningProfile> {
    let (times, values) = parse_columns(content)?;
    DetuningProfile::sampled(times, values)
}

/// Reads a sampled detuning profile from a file.
pub fn load_sampled_detuning<P: AsRef<Path>>(path: P) -> Result<DetuningProfile> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| DbdError::ProfileIo {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_sampled_detuning(&content)
}

fn metadata_value(content: &str, key: &str) -> Option<f64> {
    for line in content.lines() {
        let line = line.trim();
        let Some(rest) = line.strip_prefix('#') else { continue };
        let Some((k, v)) = rest.split_once('=') else { continue };
        if k.trim() == key {
            if let Ok(x) = v.trim().parse() {
                return Some(x);
            }
        }
    }
    None
}

/// Builds the full OCT mirror pulse from profile-file text. Gaussian parameters are
/// taken from "# key = value" metadata lines when present, else from the tabulated
/// values (2.502, 1.829, 3.879); detuning knots come from the two data columns.
pub fn parse_oct_mirror(content: &str) -> Result<PulseSpec> {
    let detuning = parse_sampled_detuning(content)?;
    let omega_peak = metadata_value(content, "omega_peak").unwrap_or(OCT_MIRROR_GAUSSIAN.0);
    let tau = metadata_value(content, "tau").unwrap_or(OCT_MIRROR_GAUSSIAN.1);
    let t0 = metadata_value(content, "t0").unwrap_or(OCT_MIRROR_GAUSSIAN.2);
    PulseSpec::new(GaussianEnvelope::new(omega_peak, tau, t0)?, detuning, 0.0)
}

/// Reads the optimized mirror pulse from a profile file.
pub fn load_oct_mirror<P: AsRef<Path>>(path: P) -> Result<PulseSpec> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| DbdError::ProfileIo {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_oct_mirror(&content)
}

/// Serializes a mirror pulse to the profile-file format, Gaussian parameters in the
/// metadata header and the sampled detuning knots as two columns.
pub fn format_oct_mirror(pulse: &PulseSpec) -> String {
    let mut out = String::new();
    out.push_str("# optimized double Bragg mirror pulse\n");
    out.push_str("# times are relative to the envelope centre, units 1/omega_rec\n");
    out.push_str(&format!("# omega_peak = {}\n", pulse.envelope.omega_peak));
    out.push_str(&format!("# tau = {}\n", pulse.envelope.tau));
    out.push_str(&format!("# t0 = {}\n", pulse.envelope.t0));
    out.push_str("# columns: t delta\n");
    if let DetuningProfile::Sampled(spline) = &pulse.detuning {
        let (times, values) = spline.knots();
        for (t, v) in times.iter().zip(values) {
            out.push_str(&format!("{t} {v}\n"));
        }
    }
    out
}

/// Profile text of the optimized mirror shipped with the crate, re-derivable with the
/// mirror optimizer (same seed and budget as the acceptance suite).
pub const BUNDLED_OCT_PROFILE: &str = include_str!("../data/oct_mirror_profile.txt");

/// The shipped optimized mirror pulse.
pub fn bundled_oct_mirror() -> PulseSpec {
    parse_oct_mirror(BUNDLED_OCT_PROFILE).expect("bundled profile is well-formed")
}

/// Convenience: the preset for any strategy, with the OCT mirror taken from the
/// bundled profile.
pub fn preset_with_bundled_oct(strategy: Strategy) -> StrategyPreset {
    match strategy {
        Strategy::Oct => Strategy::preset_with_oct_mirror(bundled_oct_mirror()),
        other => other.preset().expect("tabulated preset"),
    }
}
