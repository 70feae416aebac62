//! Subcommand implementations. Each one resolves its inputs from the run config,
//! computes through dbd-core, and emits one table through [`Report`] so that every
//! output can be re-run as a config.

use std::f64::consts::PI;

use anyhow::bail;
use rayon::prelude::*;

use dbd_core::exact::{exact_efficiency, run_mz_exact, MovieSpec, SolverConfig};
use dbd_core::five_level::{
    efficiency_landscape, integrated_efficiency, EfficiencyKind,
};
use dbd_core::interferometer::{
    contrast_scan as scan_contrast, fringe_window, t_scan, MZConfig, ScanAxis, ScanWindow,
};
use dbd_core::oct::{
    format_optimization_log, optimize_mirror as run_optimizer, ControlParams, CostConfig,
};
use dbd_core::pulses::{format_oct_mirror, StrategyPreset};
use dbd_core::robustness::{contrast_under_depth_noise, FactorMode, RobustnessSpec};
use dbd_core::{SpatialGrid, WavePacket};

use crate::config::{Engine, RunConfig};
use crate::report::Report;

/// Spatial grid for the exact engine. Explicit settings win; otherwise the packet
/// width picks between the standard grid and the finer narrow-packet grid, keeping
/// at least eight momentum points per sigma_p.
fn solver_grid(config: &RunConfig) -> anyhow::Result<SpatialGrid> {
    if config.grid_points == 0 && config.z_half_pi == 0.0 {
        let grid = SpatialGrid::default_interferometer();
        if config.sigma_p / grid.dp() >= 8.0 {
            return Ok(grid);
        }
        return Ok(SpatialGrid::narrow_packet());
    }
    let points = if config.grid_points == 0 { 8192 } else { config.grid_points };
    let half = if config.z_half_pi == 0.0 { 256.0 * PI } else { config.z_half_pi * PI };
    Ok(SpatialGrid::new(points, -half, half)?)
}

fn solver_config(config: &RunConfig, g: f64) -> anyhow::Result<SolverConfig> {
    let mut solver = SolverConfig::com(solver_grid(config)?, g);
    solver.dt = config.dt;
    solver.eps_pol = config.eps_pol;
    Ok(solver)
}

fn mz_config(config: &RunConfig, preset: StrategyPreset, t: f64) -> MZConfig {
    let mut mz = MZConfig::new(preset, config.g, t);
    mz.p0 = config.p0;
    mz.sigma_p = config.sigma_p;
    mz.eps_pol = config.eps_pol;
    mz.quadrature_nodes = config.quadrature_nodes;
    mz
}

/// Interrogation-time window: explicit section values win, the rest comes from the
/// first full fringe at the configured acceleration.
fn resolve_window(config: &RunConfig, preset: &StrategyPreset) -> anyhow::Result<ScanWindow> {
    let section = &config.tscan;
    let mut window = fringe_window(preset, config.g)?;
    if let Some(t_lo) = section.t_lo {
        window.t_lo = t_lo;
    }
    if let Some(t_hi) = section.t_hi {
        window.t_hi = t_hi;
    }
    if let Some(points) = section.points {
        window.n_points = points;
    }
    if !(window.t_lo < window.t_hi) || window.n_points < 2 {
        bail!(
            "tscan window needs t_lo < t_hi and at least 2 points, got [{}, {}] with {}",
            window.t_lo,
            window.t_hi,
            window.n_points
        );
    }
    Ok(window)
}

/// Writes the resolved window back into the config embedded in the output header,
/// so a re-run of that output uses the identical window.
fn pin_window(config: &RunConfig, window: ScanWindow) -> RunConfig {
    let mut pinned = config.clone();
    pinned.tscan.t_lo = Some(window.t_lo);
    pinned.tscan.t_hi = Some(window.t_hi);
    pinned.tscan.points = Some(window.n_points);
    pinned
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Beam-splitter and mirror efficiencies for one or all strategies, at zero
/// acceleration as pulse-level figures of merit.
pub fn efficiency(config: &RunConfig) -> anyhow::Result<()> {
    let strategies = config.strategies()?;
    let columns = match config.engine {
        Engine::FiveLevel | Engine::Exact => "strategy eta_bs eta_m",
        Engine::Both => "strategy eta_bs_5ls eta_m_5ls eta_bs_exact eta_m_exact",
    };
    let notes = vec![format!("engine: {}; pulse efficiencies at g = 0", config.engine)];
    let mut report = Report::new("efficiency", config, &notes, columns);

    for strategy in strategies {
        let preset = config.preset_for(strategy)?.with_eps_pol(config.eps_pol)?;
        let five = |pulse, kind| {
            integrated_efficiency(pulse, kind, config.p0, config.sigma_p, config.quadrature_nodes)
        };
        let exact = |pulse, kind| -> anyhow::Result<f64> {
            let solver = solver_config(config, 0.0)?;
            Ok(exact_efficiency(&solver, pulse, kind, config.p0, config.sigma_p)?)
        };
        let row = match config.engine {
            Engine::FiveLevel => format!(
                "{strategy} {:.6} {:.6}",
                five(&preset.bs, EfficiencyKind::BeamSplitter)?,
                five(&preset.mirror, EfficiencyKind::Mirror)?,
            ),
            Engine::Exact => format!(
                "{strategy} {:.6} {:.6}",
                exact(&preset.bs, EfficiencyKind::BeamSplitter)?,
                exact(&preset.mirror, EfficiencyKind::Mirror)?,
            ),
            Engine::Both => format!(
                "{strategy} {:.6} {:.6} {:.6} {:.6}",
                five(&preset.bs, EfficiencyKind::BeamSplitter)?,
                five(&preset.mirror, EfficiencyKind::Mirror)?,
                exact(&preset.bs, EfficiencyKind::BeamSplitter)?,
                exact(&preset.mirror, EfficiencyKind::Mirror)?,
            ),
        };
        report.row(&row);
    }
    report.emit(config.output.as_deref())
}

/// Single-pulse efficiency over the (p, eps_pol) plane.
pub fn landscape(config: &RunConfig) -> anyhow::Result<()> {
    if config.engine != Engine::FiveLevel {
        bail!("landscape supports only the 5ls engine");
    }
    let preset = config.preset_for(config.strategy()?)?;
    let section = &config.landscape;
    let (pulse, kind) = match section.pulse.as_str() {
        "bs" => (&preset.bs, EfficiencyKind::BeamSplitter),
        "mirror" => (&preset.mirror, EfficiencyKind::Mirror),
        other => bail!("unknown landscape pulse {other:?}; expected bs or mirror"),
    };
    if section.resolution < 2 {
        bail!("landscape resolution must be at least 2, got {}", section.resolution);
    }
    let table = efficiency_landscape(
        pulse,
        kind,
        (-section.p_max, section.p_max),
        (0.0, section.eps_max),
        (section.resolution, section.resolution),
    )?;
    let notes = vec![format!("pulse: {} {}", config.strategy, section.pulse)];
    let mut report = Report::new("landscape", config, &notes, "p eps_pol efficiency");
    for (p, eps, eta) in table {
        report.row(&format!("{p:.6} {eps:.6} {eta:.8}"));
    }
    report.emit(config.output.as_deref())
}

fn ports_cells(ports: &[f64; 5]) -> String {
    format!(
        "{:.8} {:.8} {:.8} {:.8} {:.8} {:.8}",
        ports[0],
        ports[1],
        ports[2],
        ports[3],
        ports[4],
        ports[1] + ports[2],
    )
}

const PORT_COLUMNS: &str = "pop_0 pop_p2 pop_m2 pop_p4 pop_m4 signal";

/// Port populations against interrogation time, from either engine or both.
pub fn tscan(config: &RunConfig) -> anyhow::Result<()> {
    let preset = config.preset_for(config.strategy()?)?;
    let window = resolve_window(config, &preset)?;
    let pinned = pin_window(config, window);
    let ts = linspace(window.t_lo, window.t_hi, window.n_points);
    let notes = vec![format!(
        "engine: {}; window: t_lo {} t_hi {} points {}",
        config.engine, window.t_lo, window.t_hi, window.n_points
    )];

    let five = || -> anyhow::Result<Vec<[f64; 5]>> {
        let mz = mz_config(config, preset.clone(), window.t_lo);
        Ok(t_scan(&mz, window.t_lo, window.t_hi, window.n_points)?.ports)
    };
    let exact = || -> anyhow::Result<Vec<[f64; 5]>> {
        let solver = solver_config(config, config.g)?;
        let packet = WavePacket::gaussian(&solver.grid, config.p0, config.sigma_p)?;
        let outcomes: Vec<dbd_core::Result<[f64; 5]>> = ts
            .par_iter()
            .map(|&t| run_mz_exact(&solver, &preset, t, &packet, None).map(|o| o.populations))
            .collect();
        outcomes.into_iter().map(|o| Ok(o?)).collect()
    };

    let mut report;
    match config.engine {
        Engine::FiveLevel => {
            report =
                Report::new("tscan", &pinned, &notes, &format!("t {PORT_COLUMNS}"));
            for (t, ports) in ts.iter().zip(five()?) {
                report.row(&format!("{t:.6} {}", ports_cells(&ports)));
            }
        }
        Engine::Exact => {
            report =
                Report::new("tscan", &pinned, &notes, &format!("t {PORT_COLUMNS}"));
            for (t, ports) in ts.iter().zip(exact()?) {
                report.row(&format!("{t:.6} {}", ports_cells(&ports)));
            }
        }
        Engine::Both => {
            let columns = format!(
                "t {} {}",
                PORT_COLUMNS.split(' ').map(|c| format!("{c}_5ls")).collect::<Vec<_>>().join(" "),
                PORT_COLUMNS.split(' ').map(|c| format!("{c}_exact")).collect::<Vec<_>>().join(" "),
            );
            report = Report::new("tscan", &pinned, &notes, &columns);
            for ((t, f), e) in ts.iter().zip(five()?).zip(exact()?) {
                report.row(&format!("{t:.6} {} {}", ports_cells(&f), ports_cells(&e)));
            }
        }
    }
    report.emit(config.output.as_deref())
}

/// Fringe contrast against sigma_p, p0, or eps_pol.
pub fn contrast_scan(config: &RunConfig) -> anyhow::Result<()> {
    if config.engine != Engine::FiveLevel {
        bail!("contrast-scan supports only the 5ls engine");
    }
    let section = &config.contrast_scan;
    let axis = match section.axis.as_str() {
        "sigma_p" => ScanAxis::SigmaP,
        "p0" => ScanAxis::P0,
        "eps_pol" => ScanAxis::EpsPol,
        other => bail!("unknown scan axis {other:?}; expected sigma_p, p0, or eps_pol"),
    };
    if section.step <= 0.0 || section.hi < section.lo {
        bail!(
            "contrast scan needs lo <= hi and step > 0, got [{}, {}] step {}",
            section.lo,
            section.hi,
            section.step
        );
    }
    let n = ((section.hi - section.lo) / section.step + 1e-9).floor() as usize + 1;
    let values: Vec<f64> = (0..n).map(|i| section.lo + i as f64 * section.step).collect();

    let preset = config.preset_for(config.strategy()?)?;
    let window = resolve_window(config, &preset)?;
    let pinned = pin_window(config, window);
    let template = mz_config(config, preset, window.t_lo);
    let points = scan_contrast(&template, axis, &values, &window)?;

    let notes = vec![format!(
        "axis: {}; window: t_lo {} t_hi {} points {}",
        section.axis, window.t_lo, window.t_hi, window.n_points
    )];
    let mut report = Report::new(
        "contrast-scan",
        &pinned,
        &notes,
        "value contrast t_max t_min p_max p_min offset",
    );
    for point in points {
        let c = point.contrast;
        report.row(&format!(
            "{:.6} {:.6} {:.4} {:.4} {:.6} {:.6} {:.6}",
            point.value,
            c.contrast,
            c.t_max,
            c.t_min,
            c.p_max,
            c.p_min,
            c.offset()
        ));
    }
    report.emit(config.output.as_deref())
}

/// Monte-Carlo fringe contrast under lattice-depth fluctuations, one row per
/// relative spread.
pub fn robustness(config: &RunConfig) -> anyhow::Result<()> {
    if config.engine != Engine::FiveLevel {
        bail!("robustness supports only the 5ls engine");
    }
    let section = &config.robustness;
    let mode = if section.shared_factors {
        FactorMode::Shared
    } else {
        FactorMode::Independent
    };
    let preset = config.preset_for(config.strategy()?)?;
    let window = resolve_window(config, &preset)?;
    let pinned = pin_window(config, window);
    let template = mz_config(config, preset, window.t_lo);

    let notes = vec![format!(
        "factors: {}; realizations: {}; window: t_lo {} t_hi {} points {}",
        if section.shared_factors { "shared" } else { "independent" },
        section.realizations,
        window.t_lo,
        window.t_hi,
        window.n_points
    )];
    let mut report = Report::new(
        "robustness",
        &pinned,
        &notes,
        "sigma_r mean std band_lower band_upper",
    );
    for (i, &sigma_r) in section.sigma_r.iter().enumerate() {
        let spec = RobustnessSpec::new(sigma_r, section.realizations, config.seed.wrapping_add(i as u64))?
            .with_mode(mode);
        let summary = contrast_under_depth_noise(&template, window, &spec)?;
        report.row(&format!(
            "{:.6} {:.6} {:.6} {:.6} {:.6}",
            summary.sigma_r, summary.mean, summary.std_dev, summary.band.lower, summary.band.upper
        ));
    }
    report.emit(config.output.as_deref())
}

/// Real-space density movie of the full Mach-Zehnder sequence, long-form
/// (t, z, dB) rows.
pub fn density(config: &RunConfig) -> anyhow::Result<()> {
    if config.engine != Engine::Exact {
        bail!("density requires --engine exact");
    }
    let preset = config.preset_for(config.strategy()?)?;
    let t = match config.t {
        Some(t) => t,
        None => (PI / (4.0 * config.g)).sqrt(),
    };
    let solver = solver_config(config, config.g)?;
    let packet = WavePacket::gaussian(&solver.grid, config.p0, config.sigma_p)?;

    let section = &config.density;
    let stride = if section.stride > 0 {
        section.stride
    } else {
        let total_time = 2.0 * t + 10.0 * preset.bs.envelope.tau;
        ((total_time / config.dt / 300.0).round() as usize).max(1)
    };
    let z_stride = section.z_stride.max(1);
    let movie_spec = MovieSpec { stride, floor_db: section.floor_db };

    let outcome = run_mz_exact(&solver, &preset, t, &packet, Some(movie_spec))?;
    let movie = outcome.movie.expect("movie was requested");

    let mut pinned = config.clone();
    pinned.t = Some(t);
    pinned.density.stride = stride;
    let notes = vec![
        format!("t: {t}; stride: {stride}; z_stride: {z_stride}"),
        format!("norm_drift: {:.3e}; readout_shift: {:.6}", outcome.norm_drift, outcome.readout_shift),
        format!("ports: {}", ports_cells(&outcome.populations)),
    ];
    let mut report = Report::new("density", &pinned, &notes, "t z db");
    for (frame, &time) in movie.frames_db.iter().zip(&movie.times) {
        for (j, db) in frame.iter().enumerate().step_by(z_stride) {
            report.row(&format!("{time:.4} {:.4} {db:.3}", movie.zs[j]));
        }
    }
    report.emit(config.output.as_deref())
}

/// Re-derives the optimized mirror pulse, writing the detuning profile and the
/// improvement log next to the summary table.
pub fn optimize_mirror(config: &RunConfig) -> anyhow::Result<()> {
    let section = &config.optimize;
    let init = ControlParams::ds_mirror_init_with(section.knots);
    let cost_cfg = CostConfig { eps_pol: config.eps_pol, ..CostConfig::default() };
    let run = run_optimizer(&init, &cost_cfg, section.budget, config.seed)?;

    let pulse = run.pulse()?;
    std::fs::write(&section.profile_out, format_oct_mirror(&pulse))
        .map_err(|e| anyhow::anyhow!("cannot write profile {}: {e}", section.profile_out))?;

    let log_notes = vec![format!("improvements: {}", run.trace.len())];
    let mut log = Report::new(
        "optimize-mirror",
        config,
        &log_notes,
        "evaluations cost omega_peak tau knots...",
    );
    for line in format_optimization_log(&run).lines().filter(|l| !l.starts_with('#')) {
        log.row(line);
    }
    log.emit(Some(&section.log_out))?;

    let eta_m = integrated_efficiency(
        &pulse,
        EfficiencyKind::Mirror,
        config.p0,
        config.sigma_p,
        config.quadrature_nodes,
    )?;
    let notes = vec![
        format!("profile: {}; log: {}", section.profile_out, section.log_out),
        format!("eta_m at (p0 {}, sigma_p {})", config.p0, config.sigma_p),
    ];
    let mut report = Report::new(
        "optimize-mirror",
        config,
        &notes,
        "initial_cost best_cost evaluations improved eta_m",
    );
    report.row(&format!(
        "{:.6e} {:.6e} {} {} {:.6}",
        run.initial_cost, run.best_cost, run.evaluations, run.improved, eta_m
    ));
    report.emit(config.output.as_deref())
}
