//! Run configuration: one TOML document with per-command sections, command-line
//! overrides that win over the file, and the resolved form embedded in every
//! output so that any result file can be re-run as a config.

use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use dbd_core::exact::DEFAULT_DT;
use dbd_core::interferometer::DEFAULT_QUADRATURE_NODES;
use dbd_core::oct::{BUNDLED_PROFILE_BUDGET, BUNDLED_PROFILE_SEED, DEFAULT_KNOT_COUNT};
use dbd_core::pulses::{
    load_oct_mirror, preset_with_bundled_oct, Strategy, StrategyPreset,
};

/// Evolution engine behind a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Engine {
    #[serde(rename = "5ls")]
    FiveLevel,
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "both")]
    Both,
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "5ls" => Ok(Engine::FiveLevel),
            "exact" => Ok(Engine::Exact),
            "both" => Ok(Engine::Both),
            other => Err(format!("unknown engine {other:?}; expected 5ls, exact, or both")),
        }
    }
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Engine::FiveLevel => "5ls",
            Engine::Exact => "exact",
            Engine::Both => "both",
        })
    }
}

/// The full run configuration. Every field has a default, so an empty document is
/// a valid config; unknown keys are rejected to catch typos.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Strategy name: c-dbd, cd-dbd, ds-dbd, or oct (efficiency also accepts all).
    pub strategy: String,
    /// Acceleration, k_L^-1 omega_rec^2.
    pub g: f64,
    /// Interrogation time, 1/omega_rec; unset picks a command-specific default.
    pub t: Option<f64>,
    /// Packet momentum centre, hbar k_L.
    pub p0: f64,
    /// Packet momentum width, hbar k_L.
    pub sigma_p: f64,
    /// Relative polarization error.
    pub eps_pol: f64,
    /// Seed of the counter-based generator (ChaCha12) behind every random draw.
    pub seed: u64,
    pub engine: Engine,
    /// Floor on the Gauss-Legendre node count of 5LS momentum averages.
    pub quadrature_nodes: usize,
    /// Exact engine: spatial grid points (power of two); 0 picks automatically
    /// from sigma_p.
    pub grid_points: usize,
    /// Exact engine: half-extent of the grid in units of pi/k_L; 0 picks
    /// automatically.
    pub z_half_pi: f64,
    /// Exact engine: Strang step, 1/omega_rec.
    pub dt: f64,
    /// Detuning profile file for the OCT mirror; unset uses the bundled profile.
    pub oct_profile: Option<String>,
    /// Output file; unset writes to stdout. Never embedded in output headers, so
    /// the same scan is byte-identical wherever it is written.
    #[serde(skip_serializing)]
    pub output: Option<String>,
    pub tscan: TscanSection,
    pub contrast_scan: ContrastScanSection,
    pub robustness: RobustnessSection,
    pub landscape: LandscapeSection,
    pub density: DensitySection,
    pub optimize: OptimizeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            strategy: "ds-dbd".to_string(),
            g: 3.57e-4,
            t: None,
            p0: 0.0,
            sigma_p: 0.05,
            eps_pol: 0.0,
            seed: BUNDLED_PROFILE_SEED,
            engine: Engine::FiveLevel,
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
            grid_points: 0,
            z_half_pi: 0.0,
            dt: DEFAULT_DT,
            oct_profile: None,
            output: None,
            tscan: TscanSection::default(),
            contrast_scan: ContrastScanSection::default(),
            robustness: RobustnessSection::default(),
            landscape: LandscapeSection::default(),
            density: DensitySection::default(),
            optimize: OptimizeSection::default(),
        }
    }
}

/// T-scan window; unset bounds fall back to the first full fringe at g.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TscanSection {
    pub t_lo: Option<f64>,
    pub t_hi: Option<f64>,
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastScanSection {
    /// Swept parameter: sigma_p, p0, or eps_pol.
    pub axis: String,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for ContrastScanSection {
    fn default() -> Self {
        Self { axis: "sigma_p".to_string(), lo: 0.005, hi: 0.15, step: 0.005 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSection {
    /// Relative lattice-depth spreads to study.
    pub sigma_r: Vec<f64>,
    pub realizations: usize,
    /// One shared depth factor for all three pulses instead of independent draws.
    pub shared_factors: bool,
}

impl Default for RobustnessSection {
    fn default() -> Self {
        Self {
            sigma_r: vec![0.0, 0.01, 0.02, 0.03, 0.04, 0.05],
            realizations: 10,
            shared_factors: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeSection {
    /// Which pulse to map: bs or mirror.
    pub pulse: String,
    pub p_max: f64,
    pub eps_max: f64,
    /// Grid points per axis.
    pub resolution: usize,
}

impl Default for LandscapeSection {
    fn default() -> Self {
        Self { pulse: "mirror".to_string(), p_max: 0.2, eps_max: 0.2, resolution: 41 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySection {
    /// Strang steps between captured frames; 0 targets about 300 frames.
    pub stride: usize,
    pub floor_db: f64,
    /// Keep every n-th grid point along z.
    pub z_stride: usize,
}

impl Default for DensitySection {
    fn default() -> Self {
        Self { stride: 0, floor_db: -60.0, z_stride: 8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeSection {
    pub budget: usize,
    pub knots: usize,
    pub profile_out: String,
    pub log_out: String,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        Self {
            budget: BUNDLED_PROFILE_BUDGET,
            knots: DEFAULT_KNOT_COUNT,
            profile_out: "oct_mirror_profile.txt".to_string(),
            log_out: "oct_mirror_log.txt".to_string(),
        }
    }
}

impl RunConfig {
    /// Reads a config from a TOML file or from the '# '-prefixed block embedded in
    /// a previous output file.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let text = extract_embedded(&raw).unwrap_or(raw);
        let config: RunConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        Ok(config)
    }

    /// Canonicalizes the strategy name and checks cross-field constraints that do
    /// not depend on the command.
    pub fn normalize(&mut self) -> anyhow::Result<()> {
        if !self.strategy.eq_ignore_ascii_case("all") {
            let strategy = Strategy::from_str(&self.strategy).map_err(anyhow::Error::msg)?;
            self.strategy = strategy.to_string();
        }
        if self.dt <= 0.0 {
            bail!("dt must be positive, got {}", self.dt);
        }
        if self.grid_points != 0 && !self.grid_points.is_power_of_two() {
            bail!("grid_points must be a power of two, got {}", self.grid_points);
        }
        Ok(())
    }

    /// The single strategy this run concerns; "all" is rejected here.
    pub fn strategy(&self) -> anyhow::Result<Strategy> {
        Strategy::from_str(&self.strategy).map_err(anyhow::Error::msg)
    }

    /// Strategies this run concerns, expanding "all".
    pub fn strategies(&self) -> anyhow::Result<Vec<Strategy>> {
        if self.strategy.eq_ignore_ascii_case("all") {
            Ok(dbd_core::pulses::ALL_STRATEGIES.to_vec())
        } else {
            Ok(vec![self.strategy()?])
        }
    }

    /// Pulse preset for one strategy, honoring the configured OCT profile path.
    pub fn preset_for(&self, strategy: Strategy) -> anyhow::Result<StrategyPreset> {
        match (strategy, &self.oct_profile) {
            (Strategy::Oct, Some(path)) => {
                let mirror = load_oct_mirror(path)?;
                Ok(Strategy::preset_with_oct_mirror(mirror))
            }
            _ => Ok(preset_with_bundled_oct(strategy)),
        }
    }

    /// The resolved document embedded in outputs; parsing it back yields this
    /// config again.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Pulls the config block out of a previous output file: the lines between
/// `# config-begin` and `# config-end`, stripped of their comment prefix.
fn extract_embedded(text: &str) -> Option<String> {
    let mut inside = false;
    let mut block = String::new();
    for line in text.lines() {
        let body = line.strip_prefix('#').map(str::trim_start).unwrap_or(line);
        if body == "config-begin" {
            inside = true;
            continue;
        }
        if body == "config-end" {
            return Some(block);
        }
        if inside {
            block.push_str(body);
            block.push('\n');
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default_config() {
        let config: RunConfig = toml::from_str("").unwrap();
        assert_eq!(config.strategy, "ds-dbd");
        assert_eq!(config.engine, Engine::FiveLevel);
        assert_eq!(config.seed, BUNDLED_PROFILE_SEED);
        assert_eq!(config.robustness.realizations, 10);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut config = RunConfig::default();
        config.strategy = "oct".to_string();
        config.t = Some(42.5);
        config.robustness.shared_factors = true;
        let text = config.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.strategy, "oct");
        assert_eq!(back.t, Some(42.5));
        assert!(back.robustness.shared_factors);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("sigma = 0.05").unwrap_err();
        assert!(err.to_string().contains("unknown field"));
    }

    #[test]
    fn embedded_blocks_are_recovered() {
        let output = "\
# dbd 0.1.0\n\
# command: efficiency\n\
# config-begin\n\
# strategy = \"cd-dbd\"\n\
# g = 0.02\n\
# config-end\n\
# columns: a b\n\
1 2\n";
        let block = extract_embedded(output).unwrap();
        let config: RunConfig = toml::from_str(&block).unwrap();
        assert_eq!(config.strategy, "cd-dbd");
        assert_eq!(config.g, 0.02);
    }

    #[test]
    fn strategy_names_are_canonicalized() {
        let mut config = RunConfig::default();
        config.strategy = "ds".to_string();
        config.normalize().unwrap();
        assert_eq!(config.strategy, "DS-DBD");
        config.strategy = "nope".to_string();
        assert!(config.normalize().is_err());
    }
}
