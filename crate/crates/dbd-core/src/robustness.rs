//! Contrast robustness to shot-to-shot fluctuations of the peak lattice depth.
//!
//! Every strategy is tuned at its optimal peak depths, so the contrast is
//! first-order insensitive to small relative fluctuations sigma_R and only
//! degrades past a threshold. The Monte-Carlo study draws one multiplicative
//! factor per pulse and realization from N(1, sigma_R^2), rescales the three
//! pulses, rescans the fringe, and reports the contrast mean and spread. A
//! deterministic confidence band brackets the same loss without sampling: the
//! unperturbed contrast above, the worse of the two contrasts with all depths
//! scaled together by 1 +- 1.05 sigma_R below.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{DbdError, Result};
use crate::interferometer::{extract_contrast, t_scan_with_pulses, MZConfig, ScanWindow};

/// Largest modeled relative depth spread.
pub const MAX_DEPTH_SPREAD: f64 = 0.1;

/// Realization count used for the headline numbers.
pub const DEFAULT_REALIZATIONS: usize = 10;

/// How the per-pulse depth factors of one realization relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorMode {
    /// Three independent draws per realization, one per pulse.
    Independent,
    /// One draw per realization applied to all three pulses, for fluctuations
    /// slower than the pulse sequence.
    Shared,
}

/// One Monte-Carlo study: relative depth spread, sample size, seed, and factor mode.
#[derive(Debug, Clone, Copy)]
pub struct RobustnessSpec {
    pub sigma_r: f64,
    pub realizations: usize,
    pub seed: u64,
    pub mode: FactorMode,
}

impl RobustnessSpec {
    pub fn new(sigma_r: f64, realizations: usize, seed: u64) -> Result<Self> {
        if !sigma_r.is_finite() || !(0.0..=MAX_DEPTH_SPREAD).contains(&sigma_r) {
            return Err(DbdError::RobustnessSpreadOutOfRange(sigma_r));
        }
        if realizations < 2 {
            return Err(DbdError::TooFewRealizations(realizations));
        }
        Ok(Self { sigma_r, realizations, seed, mode: FactorMode::Independent })
    }

    pub fn with_mode(self, mode: FactorMode) -> Self {
        Self { mode, ..self }
    }
}

/// Multiplicative peak-depth factors of one realization, in pulse order.
#[derive(Debug, Clone, Copy)]
pub struct DepthFactors {
    pub bs1: f64,
    pub mirror: f64,
    pub bs2: f64,
}

/// The factor sequence a spec expands to: N(1, sigma_R^2) draws in a fixed order
/// from a seeded stream cipher, three per realization or one shared, per the mode.
pub fn depth_factors(spec: &RobustnessSpec) -> Vec<DepthFactors> {
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut draw = move || 1.0 + spec.sigma_r * rng.sample::<f64, _>(StandardNormal);
    (0..spec.realizations)
        .map(|_| match spec.mode {
            FactorMode::Independent => {
                DepthFactors { bs1: draw(), mirror: draw(), bs2: draw() }
            }
            FactorMode::Shared => {
                let f = draw();
                DepthFactors { bs1: f, mirror: f, bs2: f }
            }
        })
        .collect()
}

/// Deterministic five-level confidence band of the contrast at spread sigma_R.
#[derive(Debug, Clone, Copy)]
pub struct ConfidenceBand {
    /// Contrast at the optimal depths.
    pub upper: f64,
    /// Worst contrast with every depth scaled by 1 + 1.05 sigma_R or 1 - 1.05 sigma_R.
    pub lower: f64,
}

/// Monte-Carlo contrast statistics at one depth spread.
#[derive(Debug, Clone)]
pub struct RobustnessSummary {
    pub sigma_r: f64,
    pub contrasts: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over realizations.
    pub std_dev: f64,
    pub band: ConfidenceBand,
}

fn scaled_contrast(
    config: &MZConfig,
    window: ScanWindow,
    factors: DepthFactors,
) -> Result<f64> {
    let preset = config.preset.with_eps_pol(config.eps_pol)?;
    let bs1 = preset.bs.scaled_amplitude(factors.bs1)?;
    let mirror = preset.mirror.scaled_amplitude(factors.mirror)?;
    let bs2 = preset.bs.scaled_amplitude(factors.bs2)?;
    let signal = t_scan_with_pulses(
        config,
        &bs1,
        &mirror,
        &bs2,
        window.t_lo,
        window.t_hi,
        window.n_points,
    )?;
    Ok(extract_contrast(&signal)?.contrast)
}

/// The deterministic band for one spread value.
pub fn confidence_band(config: &MZConfig, window: ScanWindow, sigma_r: f64) -> Result<ConfidenceBand> {
    let unit = DepthFactors { bs1: 1.0, mirror: 1.0, bs2: 1.0 };
    let upper = scaled_contrast(config, window, unit)?;
    if sigma_r == 0.0 {
        return Ok(ConfidenceBand { upper, lower: upper });
    }
    let mut lower = upper;
    for factor in [1.0 + 1.05 * sigma_r, 1.0 - 1.05 * sigma_r] {
        let all = DepthFactors { bs1: factor, mirror: factor, bs2: factor };
        lower = lower.min(scaled_contrast(config, window, all)?);
    }
    Ok(ConfidenceBand { upper, lower })
}

/// Fringe contrast under lattice-depth noise: mean and spread over seeded
/// realizations, plus the deterministic band. A zero spread short-circuits to one
/// scan since every factor is then exactly 1.
pub fn contrast_under_depth_noise(
    config: &MZConfig,
    window: ScanWindow,
    spec: &RobustnessSpec,
) -> Result<RobustnessSummary> {
    let band = confidence_band(config, window, spec.sigma_r)?;
    if spec.sigma_r == 0.0 {
        return Ok(RobustnessSummary {
            sigma_r: 0.0,
            contrasts: vec![band.upper; spec.realizations],
            mean: band.upper,
            std_dev: 0.0,
            band,
        });
    }
    let mut contrasts = Vec::with_capacity(spec.realizations);
    for factors in depth_factors(spec) {
        contrasts.push(scaled_contrast(config, window, factors)?);
    }
    let n = contrasts.len() as f64;
    let mean = contrasts.iter().sum::<f64>() / n;
    let variance =
        contrasts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0);
    Ok(RobustnessSummary {
        sigma_r: spec.sigma_r,
        contrasts,
        mean,
        std_dev: variance.sqrt(),
        band,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interferometer::fringe_window;
    use crate::pulses::Strategy;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spec_validation_matches_the_modeled_range() {
        assert!(RobustnessSpec::new(0.0, 2, 1).is_ok());
        assert!(RobustnessSpec::new(0.1, 2, 1).is_ok());
        match RobustnessSpec::new(0.11, 10, 1) {
            Err(DbdError::RobustnessSpreadOutOfRange(v)) => assert_eq!(v, 0.11),
            other => panic!("expected spread error, got {other:?}"),
        }
        match RobustnessSpec::new(0.05, 1, 1) {
            Err(DbdError::TooFewRealizations(1)) => {}
            other => panic!("expected realization error, got {other:?}"),
        }
    }

    #[test]
    fn depth_factors_are_seeded_and_calibrated() {
        let spec = RobustnessSpec::new(0.05, 4000, 42).unwrap();
        let draws = depth_factors(&spec);
        let again = depth_factors(&spec);
        assert_eq!(draws.len(), 4000);
        assert_eq!(draws[17].mirror, again[17].mirror);
        let all: Vec<f64> = draws
            .iter()
            .flat_map(|d| [d.bs1, d.mirror, d.bs2])
            .collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / (all.len() - 1) as f64;
        assert_abs_diff_eq!(mean, 1.0, epsilon = 3.0 * 0.05 / (all.len() as f64).sqrt());
        assert_abs_diff_eq!(var.sqrt(), 0.05, epsilon = 0.002);

        let frozen = depth_factors(&RobustnessSpec::new(0.0, 3, 9).unwrap());
        assert!(frozen.iter().all(|d| d.bs1 == 1.0 && d.mirror == 1.0 && d.bs2 == 1.0));

        let shared_spec =
            RobustnessSpec::new(0.05, 6, 42).unwrap().with_mode(FactorMode::Shared);
        let shared = depth_factors(&shared_spec);
        assert!(shared.iter().all(|d| d.bs1 == d.mirror && d.mirror == d.bs2));
        assert_ne!(shared[0].bs1, shared[1].bs1);
    }

    #[test]
    fn zero_spread_reproduces_the_deterministic_contrast_with_zero_std() {
        let preset = Strategy::DetuningSweep.preset().unwrap();
        let g = 0.02;
        let window = fringe_window(&preset, g).unwrap();
        let config = MZConfig::new(preset, g, window.t_hi);
        let spec = RobustnessSpec::new(0.0, 3, 5).unwrap();
        let summary = contrast_under_depth_noise(&config, window, &spec).unwrap();
        assert_eq!(summary.std_dev, 0.0);
        assert_eq!(summary.mean, summary.band.upper);
        assert_eq!(summary.band.lower, summary.band.upper);
        assert!(summary.mean > 0.85, "DS contrast at the optimum, got {}", summary.mean);

        let signal = crate::interferometer::t_scan(
            &config,
            window.t_lo,
            window.t_hi,
            window.n_points,
        )
        .unwrap();
        let direct = extract_contrast(&signal).unwrap().contrast;
        assert_abs_diff_eq!(summary.mean, direct, epsilon = 1e-12);
    }

    #[test]
    fn band_brackets_small_spreads() {
        let preset = Strategy::DetuningSweep.preset().unwrap();
        let g = 0.02;
        let window = fringe_window(&preset, g).unwrap();
        let config = MZConfig::new(preset, g, window.t_hi);
        let band = confidence_band(&config, window, 0.03).unwrap();
        assert!(band.lower <= band.upper);
        assert!(band.lower > 0.8, "depth offsets of 3% stay mild, got {}", band.lower);
    }
}
