//! Command-line front end: scan orchestration over the five-level and exact
//! engines, Monte-Carlo lattice-depth robustness, and the mirror-pulse optimizer,
//! all emitting delimited text tables with an embedded resolved config.
//!
//! Exit codes: 0 on success, 2 for configuration errors (including command-line
//! misuse), 3 when a numerical computation fails to converge or blows up.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dbd_core::DbdError;

use config::{Engine, RunConfig};

#[derive(Parser)]
#[command(
    name = "dbd",
    version,
    about = "Double Bragg diffraction Mach-Zehnder interferometer toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides shared by every subcommand; any flag given here wins over the
/// config file.
#[derive(Args, Debug, Default)]
struct Common {
    /// Config file: TOML, or a previous output with an embedded config block
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Strategy: c-dbd, cd-dbd, ds-dbd, oct (efficiency also accepts all)
    #[arg(long, global = true)]
    strategy: Option<String>,
    /// Acceleration, k_L^-1 omega_rec^2
    #[arg(long, global = true)]
    g: Option<f64>,
    /// Interrogation time, 1/omega_rec
    #[arg(long, global = true)]
    t: Option<f64>,
    /// Packet momentum centre, hbar k_L
    #[arg(long, global = true)]
    p0: Option<f64>,
    /// Packet momentum width, hbar k_L
    #[arg(long, global = true)]
    sigma_p: Option<f64>,
    /// Relative polarization error
    #[arg(long, global = true)]
    eps_pol: Option<f64>,
    /// RNG seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Engine: 5ls, exact, or both
    #[arg(long, global = true)]
    engine: Option<Engine>,
    /// Gauss-Legendre node floor for 5LS momentum averages
    #[arg(long, global = true)]
    quadrature_nodes: Option<usize>,
    /// Exact engine: grid points (power of two, 0 = auto)
    #[arg(long, global = true)]
    grid_points: Option<usize>,
    /// Exact engine: grid half-extent in units of pi (0 = auto)
    #[arg(long, global = true)]
    z_half_pi: Option<f64>,
    /// Exact engine: Strang step, 1/omega_rec
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// OCT mirror detuning profile file (default: bundled)
    #[arg(long, global = true)]
    oct_profile: Option<PathBuf>,
    /// Output file (default: stdout)
    #[arg(long, short = 'o', global = true)]
    output: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.strategy {
            config.strategy = v.clone();
        }
        if let Some(v) = self.g {
            config.g = v;
        }
        if let Some(v) = self.t {
            config.t = Some(v);
        }
        if let Some(v) = self.p0 {
            config.p0 = v;
        }
        if let Some(v) = self.sigma_p {
            config.sigma_p = v;
        }
        if let Some(v) = self.eps_pol {
            config.eps_pol = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.engine {
            config.engine = v;
        }
        if let Some(v) = self.quadrature_nodes {
            config.quadrature_nodes = v;
        }
        if let Some(v) = self.grid_points {
            config.grid_points = v;
        }
        if let Some(v) = self.z_half_pi {
            config.z_half_pi = v;
        }
        if let Some(v) = self.dt {
            config.dt = v;
        }
        if let Some(v) = &self.oct_profile {
            config.oct_profile = Some(v.display().to_string());
        }
        if let Some(v) = &self.output {
            config.output = Some(v.display().to_string());
        }
        config.normalize()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Beam-splitter and mirror efficiencies at one packet setting
    Efficiency {
        #[command(flatten)]
        common: Common,
    },
    /// Pulse efficiency over the (p, eps_pol) plane
    Landscape {
        #[command(flatten)]
        common: Common,
        /// Pulse to map: bs or mirror
        #[arg(long)]
        pulse: Option<String>,
        /// Momentum half-range, hbar k_L
        #[arg(long)]
        p_max: Option<f64>,
        /// Polarization-error range top
        #[arg(long)]
        eps_max: Option<f64>,
        /// Grid points per axis
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Port populations against interrogation time
    Tscan {
        #[command(flatten)]
        common: Common,
        /// Scan start, 1/omega_rec
        #[arg(long)]
        t_lo: Option<f64>,
        /// Scan end, 1/omega_rec
        #[arg(long)]
        t_hi: Option<f64>,
        /// Number of scan points
        #[arg(long)]
        points: Option<usize>,
    },
    /// Fringe contrast against sigma_p, p0, or eps_pol
    ContrastScan {
        #[command(flatten)]
        common: Common,
        /// Swept parameter: sigma_p, p0, or eps_pol
        #[arg(long)]
        axis: Option<String>,
        /// Sweep start
        #[arg(long)]
        lo: Option<f64>,
        /// Sweep end
        #[arg(long)]
        hi: Option<f64>,
        /// Sweep step
        #[arg(long)]
        step: Option<f64>,
    },
    /// Monte-Carlo contrast under lattice-depth fluctuations
    Robustness {
        #[command(flatten)]
        common: Common,
        /// Relative depth spreads, comma-separated
        #[arg(long, value_delimiter = ',')]
        sigma_r: Option<Vec<f64>>,
        /// Realizations per spread
        #[arg(long)]
        realizations: Option<usize>,
        /// Draw one shared depth factor per realization instead of independent
        /// per-pulse factors
        #[arg(long)]
        shared_factors: bool,
    },
    /// Real-space density movie of the full sequence (exact engine)
    Density {
        #[command(flatten)]
        common: Common,
        /// Strang steps between frames (0 = auto)
        #[arg(long)]
        stride: Option<usize>,
        /// Clamp floor in dB
        #[arg(long)]
        floor_db: Option<f64>,
        /// Keep every n-th grid point along z
        #[arg(long)]
        z_stride: Option<usize>,
    },
    /// Re-derive the optimized mirror pulse
    OptimizeMirror {
        #[command(flatten)]
        common: Common,
        /// Cost-evaluation budget
        #[arg(long)]
        budget: Option<usize>,
        /// Number of detuning knots
        #[arg(long)]
        knots: Option<usize>,
        /// Where to write the detuning profile
        #[arg(long)]
        profile_out: Option<PathBuf>,
        /// Where to write the improvement log
        #[arg(long)]
        log_out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Efficiency { common } => commands::efficiency(&common.resolve()?),
        Command::Landscape { common, pulse, p_max, eps_max, resolution } => {
            let mut config = common.resolve()?;
            if let Some(v) = pulse {
                config.landscape.pulse = v;
            }
            if let Some(v) = p_max {
                config.landscape.p_max = v;
            }
            if let Some(v) = eps_max {
                config.landscape.eps_max = v;
            }
            if let Some(v) = resolution {
                config.landscape.resolution = v;
            }
            commands::landscape(&config)
        }
        Command::Tscan { common, t_lo, t_hi, points } => {
            let mut config = common.resolve()?;
            if t_lo.is_some() {
                config.tscan.t_lo = t_lo;
            }
            if t_hi.is_some() {
                config.tscan.t_hi = t_hi;
            }
            if points.is_some() {
                config.tscan.points = points;
            }
            commands::tscan(&config)
        }
        Command::ContrastScan { common, axis, lo, hi, step } => {
            let mut config = common.resolve()?;
            if let Some(v) = axis {
                config.contrast_scan.axis = v;
            }
            if let Some(v) = lo {
                config.contrast_scan.lo = v;
            }
            if let Some(v) = hi {
                config.contrast_scan.hi = v;
            }
            if let Some(v) = step {
                config.contrast_scan.step = v;
            }
            commands::contrast_scan(&config)
        }
        Command::Robustness { common, sigma_r, realizations, shared_factors } => {
            let mut config = common.resolve()?;
            if let Some(v) = sigma_r {
                config.robustness.sigma_r = v;
            }
            if let Some(v) = realizations {
                config.robustness.realizations = v;
            }
            if shared_factors {
                config.robustness.shared_factors = true;
            }
            commands::robustness(&config)
        }
        Command::Density { common, stride, floor_db, z_stride } => {
            let mut config = common.resolve()?;
            if let Some(v) = stride {
                config.density.stride = v;
            }
            if let Some(v) = floor_db {
                config.density.floor_db = v;
            }
            if let Some(v) = z_stride {
                config.density.z_stride = v;
            }
            commands::density(&config)
        }
        Command::OptimizeMirror { common, budget, knots, profile_out, log_out } => {
            let mut config = common.resolve()?;
            if let Some(v) = budget {
                config.optimize.budget = v;
            }
            if let Some(v) = knots {
                config.optimize.knots = v;
            }
            if let Some(v) = profile_out {
                config.optimize.profile_out = v.display().to_string();
            }
            if let Some(v) = log_out {
                config.optimize.log_out = v.display().to_string();
            }
            commands::optimize_mirror(&config)
        }
    }
}

/// Numerical failures exit with 3; everything else that goes wrong is a
/// configuration problem and exits with 2.
fn classify(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<DbdError>() {
        Some(
            DbdError::BoundaryHit { .. }
            | DbdError::IntegratorStalled { .. }
            | DbdError::QuadratureNotConverged { .. }
            | DbdError::NoExtremum { .. },
        ) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
