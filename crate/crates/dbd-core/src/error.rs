//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by grid construction, pulse I/O, and the two evolution engines.
#[derive(Debug, Clone, Error)]
pub enum DbdError {
    #[error("grid size must be a power of two, got {0}")]
    GridSizeNotPowerOfTwo(usize),
    #[error("amplitude array length {got} does not match the grid size {expected}")]
    AmplitudeLengthMismatch { expected: usize, got: usize },
    #[error("grid extent must satisfy z_min < z_max, got [{z_min}, {z_max}]")]
    GridExtentEmpty { z_min: f64, z_max: f64 },
    #[error(
        "momentum width {sigma_p} under-resolved: grid spacing {dp:.3e} gives \
         {points_per_sigma:.2} points per standard deviation, need at least 8"
    )]
    PacketUnderResolved {
        sigma_p: f64,
        dp: f64,
        points_per_sigma: f64,
    },
    #[error(
        "packet reach |p0| + 5 sigma_p = {reach} hbar*k_L extends outside the first \
         Brillouin zone"
    )]
    PacketOutsideZone { reach: f64 },
    #[error("operation requires the {expected} representation")]
    WrongRepresentation { expected: &'static str },
    #[error(
        "port bins around shift {center_shift} need momenta out to {needed} hbar*k_L but \
         the grid only reaches {available}"
    )]
    PortBinsOutsideGrid {
        center_shift: f64,
        needed: f64,
        available: f64,
    },
    #[error("pulse parameter {name} must be positive, got {value}")]
    NonPositivePulseParameter { name: &'static str, value: f64 },
    #[error("polarization error {0} outside the modeled range [0, 0.2]")]
    PolarizationOutOfRange(f64),
    #[error("detuning profile needs at least {needed} samples, got {got}")]
    ProfileTooShort { needed: usize, got: usize },
    #[error("detuning profile times must be strictly increasing (violated at sample {index})")]
    ProfileTimesNotIncreasing { index: usize },
    #[error("cannot parse detuning profile line {line}: {content:?}")]
    ProfileParse { line: usize, content: String },
    #[error("cannot read detuning profile {path}: {message}")]
    ProfileIo { path: String, message: String },
    #[error("the OCT preset needs a mirror detuning profile file; none was supplied")]
    OctProfileRequired,
    #[error("pulse windows {first} and {second} overlap; sequence is ill-formed")]
    OverlappingPulses { first: usize, second: usize },
    #[error("time step must be positive, got {0}")]
    NonPositiveTimeStep(f64),
    #[error(
        "wave packet reached the grid boundary at t = {time:.4} (density {density:.3e} \
         within the guard band)"
    )]
    BoundaryHit { time: f64, density: f64 },
    #[error("free-flight momentum shift {shift} pushes the packet support outside the grid")]
    FreeShiftOutsideGrid { shift: f64 },
    #[error("quasi-momentum {p} outside the first Brillouin zone (-1, 1)")]
    QuasiMomentumOutOfZone { p: f64 },
    #[error(
        "interrogation time too large for the S-matrix model: drifted quasi-momentum \
         {p} leaves the first Brillouin zone"
    )]
    DriftOutOfZone { p: f64 },
    #[error("adaptive integrator failed to meet tolerance near t = {time:.6}")]
    IntegratorStalled { time: f64 },
    #[error("Gauss-Legendre efficiency quadrature needs at least 33 nodes, got {0}")]
    QuadratureTooFewNodes(usize),
    #[error(
        "efficiency quadrature not converged: node doubling still moves the result by \
         {change:.3e} (limit 1e-5)"
    )]
    QuadratureNotConverged { change: f64 },
    #[error(
        "T-scan undersampled: phase step {phase_step:.4} rad exceeds pi/8; need at \
         least {required} points over this range"
    )]
    ScanUndersampled { phase_step: f64, required: usize },
    #[error(
        "T-scan range [{t_lo}, {t_hi}] spans only {phase_span:.4} rad of fringe phase; \
         a full fringe (2 pi) is required"
    )]
    ScanRangeTooShort {
        t_lo: f64,
        t_hi: f64,
        phase_span: f64,
    },
    #[error("interrogation time {t} smaller than the combined pulse half-windows {min_t}")]
    InterrogationTooShort { t: f64, min_t: f64 },
    #[error("no {kind} bracketed in the scanned range; cannot extract contrast")]
    NoExtremum { kind: &'static str },
    #[error("control parameter {name} = {value} outside its box [{lo}, {hi}]")]
    ControlOutOfBox {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("optimization budget must be at least 200 evaluations, got {0}")]
    BudgetTooSmall(usize),
    #[error("robustness spread {0} outside the modeled range [0, 0.1]")]
    RobustnessSpreadOutOfRange(f64),
    #[error("robustness study needs at least 2 realizations, got {0}")]
    TooFewRealizations(usize),
}

pub type Result<T> = std::result::Result<T, DbdError>;
