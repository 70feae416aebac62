//! Mirror-pulse optimization: momentum-averaged swap infidelity minimized over a
//! smooth sampled detuning and the Gaussian envelope parameters.
//!
//! The control vector is (omega_peak, tau, knots...): the peak Rabi rate, the
//! envelope width, and the detuning values at evenly spaced times spanning the
//! 10 tau pulse window (a natural cubic spline through them is the candidate's
//! detuning profile). The centre time t0 only translates the pulse, so it is
//! carried along but never varied. The cost of a candidate is the swap
//! infidelity |1 - F_M+(p)| + |1 - F_M-(p)| averaged over uniform momentum
//! samples in [-0.2, 0.2] hbar k_L, and the search is a seeded covariance
//! matrix adaptation evolution strategy (CMA-ES) in box-normalized coordinates.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{DbdError, Result};
use crate::five_level::{pulse_smatrix, QuasiMomentum, SMatrix5};
use crate::pulses::{
    DetuningProfile, GaussianEnvelope, PulseSpec, DS_MIRROR_SWEEP, MIRROR_GAUSSIAN,
    OCT_MIRROR_GAUSSIAN,
};
use crate::spline::CubicSpline;

/// Number of detuning knots across the pulse window.
pub const DEFAULT_KNOT_COUNT: usize = 16;

/// Smallest accepted optimization budget, in cost evaluations.
pub const MIN_BUDGET: usize = 200;

/// Box constraint on the peak Rabi rate, in omega_rec.
pub const OMEGA_BOX: (f64, f64) = (1.0, 4.0);
/// Box constraint on the envelope width, in 1/omega_rec.
pub const TAU_BOX: (f64, f64) = (0.4, 3.0);
/// Box constraint on each detuning knot, in omega_rec.
pub const KNOT_BOX: (f64, f64) = (-8.0, 8.0);

/// Seed and budget used to produce the bundled optimized-mirror profile; rerunning
/// [`optimize_mirror`] from [`ControlParams::ds_mirror_init`] with these reproduces
/// the shipped file byte for byte.
pub const BUNDLED_PROFILE_SEED: u64 = 7;
/// See [`BUNDLED_PROFILE_SEED`].
pub const BUNDLED_PROFILE_BUDGET: usize = 5000;

/// Mirror-pulse controls: Gaussian envelope parameters and the sampled detuning.
///
/// Knot times are pinned to fixed fractions of the envelope window, so they move
/// with tau: knot i sits at (i / (n - 1) - 1/2) * 10 tau from the pulse centre.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlParams {
    pub omega_peak: f64,
    pub tau: f64,
    pub t0: f64,
    pub knots: Vec<f64>,
}

impl ControlParams {
    /// The search start: the detuning-sweep mirror, its linear sweep sampled at
    /// [`DEFAULT_KNOT_COUNT`] knots.
    pub fn ds_mirror_init() -> Self {
        Self::ds_mirror_init_with(DEFAULT_KNOT_COUNT)
    }

    /// As [`ControlParams::ds_mirror_init`] with a chosen knot count.
    pub fn ds_mirror_init_with(n_knots: usize) -> Self {
        let (omega_peak, tau) = MIRROR_GAUSSIAN;
        let (alpha, beta) = DS_MIRROR_SWEEP;
        let mut params = Self {
            omega_peak,
            tau,
            t0: OCT_MIRROR_GAUSSIAN.2,
            knots: vec![0.0; n_knots],
        };
        let times = params.knot_times();
        for (knot, s) in params.knots.iter_mut().zip(times) {
            *knot = alpha / tau * s + beta;
        }
        params
    }

    /// Knot times relative to the pulse centre, evenly spanning [-5 tau, 5 tau].
    pub fn knot_times(&self) -> Vec<f64> {
        let n = self.knots.len();
        let half = crate::pulses::WINDOW_SIGMAS * self.tau;
        (0..n)
            .map(|i| half * ((2 * i) as f64 - (n - 1) as f64) / (n - 1) as f64)
            .collect()
    }

    /// Checks every control against its box.
    pub fn validate(&self) -> Result<()> {
        check_box("omega_peak", self.omega_peak, OMEGA_BOX)?;
        check_box("tau", self.tau, TAU_BOX)?;
        for &knot in &self.knots {
            check_box("knot", knot, KNOT_BOX)?;
        }
        if self.knots.len() < 4 {
            return Err(DbdError::ControlOutOfBox {
                name: "knot count",
                value: self.knots.len() as f64,
                lo: 4.0,
                hi: f64::INFINITY,
            });
        }
        Ok(())
    }

    /// The candidate pulse these controls describe.
    pub fn pulse(&self, eps_pol: f64) -> Result<PulseSpec> {
        self.validate()?;
        let envelope = GaussianEnvelope::new(self.omega_peak, self.tau, self.t0)?;
        let detuning = DetuningProfile::sampled(self.knot_times(), self.knots.clone())?;
        PulseSpec::new(envelope, detuning, eps_pol)
    }
}

fn check_box(name: &'static str, value: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo..=hi).contains(&value) {
        return Err(DbdError::ControlOutOfBox { name, value, lo, hi });
    }
    Ok(())
}

/// Momentum sampling of the optimization cost.
#[derive(Debug, Clone)]
pub struct CostConfig {
    /// Half-width of the sampled momentum range, hbar k_L.
    pub p_max: f64,
    /// Number of uniform samples across [-p_max, p_max].
    pub n_samples: usize,
    pub eps_pol: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { p_max: 0.2, n_samples: 9, eps_pol: 0.0 }
    }
}

impl CostConfig {
    /// Uniform momentum samples, exactly symmetric about zero.
    pub fn samples(&self) -> Vec<f64> {
        let n = self.n_samples.max(1);
        if n == 1 {
            return vec![0.0];
        }
        (0..n)
            .map(|i| self.p_max * ((2 * i) as f64 - (n - 1) as f64) / (n - 1) as f64)
            .collect()
    }
}

/// Swap infidelity of one S-matrix: |1 - |M_{-2,+2}|^2| + |1 - |M_{+2,-2}|^2|.
/// Zero for a perfect swap, exactly 2 when the pulse transfers nothing.
pub fn swap_infidelity(s: &SMatrix5) -> f64 {
    let f_plus = s.entry(2, 1).norm_sqr();
    let f_minus = s.entry(1, 2).norm_sqr();
    (1.0 - f_plus).abs() + (1.0 - f_minus).abs()
}

/// Momentum-averaged swap infidelity of an arbitrary candidate pulse.
pub fn pulse_cost(pulse: &PulseSpec, cfg: &CostConfig) -> Result<f64> {
    let samples = cfg.samples();
    let terms: Vec<Result<f64>> = samples
        .par_iter()
        .map(|&p| Ok(swap_infidelity(&pulse_smatrix(QuasiMomentum::new(p)?, pulse)?)))
        .collect();
    let mut total = 0.0;
    for term in terms {
        total += term?;
    }
    Ok(total / samples.len() as f64)
}

/// Momentum-averaged swap infidelity of a control vector (the optimization cost).
pub fn mirror_cost(params: &ControlParams, cfg: &CostConfig) -> Result<f64> {
    pulse_cost(&params.pulse(cfg.eps_pol)?, cfg)
}

/// One best-so-far improvement during the search.
#[derive(Debug, Clone)]
pub struct TraceEntry {
    /// Cost evaluations consumed when this best was found.
    pub evaluations: usize,
    pub cost: f64,
    pub params: ControlParams,
}

/// Result of [`optimize_mirror`].
#[derive(Debug, Clone)]
pub struct MirrorOptimization {
    pub best: ControlParams,
    pub best_cost: f64,
    pub initial_cost: f64,
    /// False when the budget ran out without beating the initial cost.
    pub improved: bool,
    pub evaluations: usize,
    /// Best-so-far improvements in evaluation order; costs are non-increasing.
    pub trace: Vec<TraceEntry>,
}

impl MirrorOptimization {
    /// The optimized mirror pulse at zero polarization error.
    pub fn pulse(&self) -> Result<PulseSpec> {
        self.best.pulse(0.0)
    }
}

/// Renders the improvement trace as delimited text: evaluation count, cost, then
/// the controls (omega_peak, tau, knots).
pub fn format_optimization_log(outcome: &MirrorOptimization) -> String {
    let mut out = String::new();
    out.push_str("# columns: evaluations cost omega_peak tau knots...\n");
    for entry in &outcome.trace {
        out.push_str(&format!(
            "{} {:.6e} {} {}",
            entry.evaluations, entry.cost, entry.params.omega_peak, entry.params.tau
        ));
        for knot in &entry.params.knots {
            out.push_str(&format!(" {knot}"));
        }
        out.push('\n');
    }
    out
}

/// Linear map of the controls onto the unit box (omega, tau, knots...); t0 is gauge
/// and stays outside the search space.
fn encode(params: &ControlParams) -> Vec<f64> {
    let mut x = Vec::with_capacity(2 + params.knots.len());
    x.push((params.omega_peak - OMEGA_BOX.0) / (OMEGA_BOX.1 - OMEGA_BOX.0));
    x.push((params.tau - TAU_BOX.0) / (TAU_BOX.1 - TAU_BOX.0));
    for &knot in &params.knots {
        x.push((knot - KNOT_BOX.0) / (KNOT_BOX.1 - KNOT_BOX.0));
    }
    x
}

fn decode(x: &[f64], t0: f64) -> ControlParams {
    ControlParams {
        omega_peak: OMEGA_BOX.0 + x[0] * (OMEGA_BOX.1 - OMEGA_BOX.0),
        tau: TAU_BOX.0 + x[1] * (TAU_BOX.1 - TAU_BOX.0),
        t0,
        knots: x[2..]
            .iter()
            .map(|&k| KNOT_BOX.0 + k * (KNOT_BOX.1 - KNOT_BOX.0))
            .collect(),
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations. Returns the
/// eigenvalues and the matrix whose columns are the matching eigenvectors.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..60 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..(n - 1) {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| a[i][i]).collect();
    (vals, v)
}

struct CmaState {
    dim: usize,
    lambda: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_c: f64,
    c_sigma: f64,
    c_1: f64,
    c_mu: f64,
    d_sigma: f64,
    chi_n: f64,
    mean: Vec<f64>,
    sigma: f64,
    cov: Vec<Vec<f64>>,
    p_c: Vec<f64>,
    p_sigma: Vec<f64>,
    generation: usize,
}

impl CmaState {
    fn new(mean: Vec<f64>, sigma: f64, lambda: usize) -> Self {
        let dim = mean.len();
        let n = dim as f64;
        let mu = lambda / 2;
        let mut weights: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1)
            .min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let d_sigma =
            1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        let mut cov = vec![vec![0.0; dim]; dim];
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self {
            dim,
            lambda,
            weights,
            mu_eff,
            c_c,
            c_sigma,
            c_1,
            c_mu,
            d_sigma,
            chi_n,
            mean,
            sigma,
            cov,
            p_c: vec![0.0; dim],
            p_sigma: vec![0.0; dim],
            generation: 0,
        }
    }

    /// Samples one generation of candidates (unconstrained; callers clamp copies for
    /// evaluation) together with the eigendecomposition used to draw them.
    fn sample(&self, rng: &mut ChaCha12Rng) -> (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) {
        let (vals, vecs) = jacobi_eigen(self.cov.clone());
        let scales: Vec<f64> = vals.iter().map(|&v| v.max(1e-14).sqrt()).collect();
        let mut candidates = Vec::with_capacity(self.lambda);
        for _ in 0..self.lambda {
            let z: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
            let mut x = self.mean.clone();
            for (i, xi) in x.iter_mut().enumerate() {
                let mut step = 0.0;
                for (j, zj) in z.iter().enumerate() {
                    step += vecs[i][j] * scales[j] * zj;
                }
                *xi += self.sigma * step;
            }
            candidates.push(x);
        }
        (candidates, scales, vecs)
    }

    /// Standard CMA-ES update from the ranked candidates of one generation.
    fn update(
        &mut self,
        ranked: &[&Vec<f64>],
        scales: &[f64],
        vecs: &[Vec<f64>],
    ) {
        let old_mean = self.mean.clone();
        let mut new_mean = vec![0.0; self.dim];
        for (w, x) in self.weights.iter().zip(ranked) {
            for (m, xi) in new_mean.iter_mut().zip(x.iter()) {
                *m += w * xi;
            }
        }
        let y_w: Vec<f64> = new_mean
            .iter()
            .zip(&old_mean)
            .map(|(m, o)| (m - o) / self.sigma)
            .collect();

        let mut c_inv_sqrt_y = vec![0.0; self.dim];
        for (j, scale) in scales.iter().enumerate() {
            let mut proj = 0.0;
            for (i, yi) in y_w.iter().enumerate() {
                proj += vecs[i][j] * yi;
            }
            let scaled = proj / scale;
            for (i, out) in c_inv_sqrt_y.iter_mut().enumerate() {
                *out += vecs[i][j] * scaled;
            }
        }
        let cs_factor = (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt();
        for (ps, ci) in self.p_sigma.iter_mut().zip(&c_inv_sqrt_y) {
            *ps = (1.0 - self.c_sigma) * *ps + cs_factor * ci;
        }
        let ps_norm = self.p_sigma.iter().map(|x| x * x).sum::<f64>().sqrt();
        let decay = 1.0 - (1.0 - self.c_sigma).powi(2 * (self.generation as i32 + 1));
        let h_sigma = if ps_norm / decay.sqrt()
            < (1.4 + 2.0 / (self.dim as f64 + 1.0)) * self.chi_n
        {
            1.0
        } else {
            0.0
        };
        let cc_factor = (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt();
        for (pc, yi) in self.p_c.iter_mut().zip(&y_w) {
            *pc = (1.0 - self.c_c) * *pc + h_sigma * cc_factor * yi;
        }

        let base = 1.0 - self.c_1 - self.c_mu
            + (1.0 - h_sigma) * self.c_1 * self.c_c * (2.0 - self.c_c);
        for i in 0..self.dim {
            for j in 0..self.dim {
                let mut rank_mu = 0.0;
                for (w, x) in self.weights.iter().zip(ranked) {
                    let yi = (x[i] - old_mean[i]) / self.sigma;
                    let yj = (x[j] - old_mean[j]) / self.sigma;
                    rank_mu += w * yi * yj;
                }
                self.cov[i][j] = base * self.cov[i][j]
                    + self.c_1 * self.p_c[i] * self.p_c[j]
                    + self.c_mu * rank_mu;
            }
        }

        self.sigma *= ((self.c_sigma / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();
        self.sigma = self.sigma.min(1.0);
        self.mean = new_mean;
        self.generation += 1;
    }
}

/// Quadratic out-of-box penalty weight applied to candidates during ranking; costs
/// are always measured at the clamped controls.
const BOX_PENALTY: f64 = 20.0;

/// Generations without improving a phase's own best before it gives up.
const STALE_LIMIT: usize = 60;

/// Number of coarse detuning controls in the smooth search phase.
const COARSE_KNOT_COUNT: usize = 8;

/// Fraction of the budget spent in the coarse phase, and the step sizes of the
/// coarse and polish sampling stages.
const COARSE_BUDGET_FRACTION: f64 = 0.4;
const COARSE_SIGMA0: f64 = 0.2;
const POLISH_SIGMA0: f64 = 0.05;

/// Central-difference step for quasi-Newton gradients, in unit-box coordinates.
const FD_STEP: f64 = 1e-3;

/// Armijo sufficient-decrease constant and the smallest backtracking step tried
/// before a line search gives up.
const ARMIJO_C1: f64 = 1e-4;
const LINE_SEARCH_FLOOR: f64 = 1e-7;

/// Shared bookkeeping for the search phases: the cost model, the map from unit-box
/// coordinates to controls, and the running evaluation count, incumbent, and trace.
struct SearchContext<'a> {
    cfg: &'a CostConfig,
    decode: &'a (dyn Fn(&[f64]) -> ControlParams + Sync),
    evaluations: &'a mut usize,
    best: &'a mut (f64, ControlParams),
    trace: &'a mut Vec<TraceEntry>,
}

impl SearchContext<'_> {
    /// Evaluates a batch of unconstrained points in parallel. Each point is clamped
    /// to the unit box, costed at the clamped controls, and assigned the penalized
    /// value cost + BOX_PENALTY * overshoot. Returns (penalized, cost) pairs in
    /// input order and folds any new incumbent into the best/trace records.
    fn eval_batch(&mut self, points: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
        let cfg = self.cfg;
        let decode = self.decode;
        let outcomes: Vec<Result<(f64, f64, Vec<f64>)>> = points
            .par_iter()
            .map(|x| {
                let clamped: Vec<f64> = x.iter().map(|v| v.clamp(0.0, 1.0)).collect();
                let overshoot: f64 =
                    x.iter().zip(&clamped).map(|(a, b)| (a - b) * (a - b)).sum();
                let cost = mirror_cost(&decode(&clamped), cfg)?;
                Ok((cost + BOX_PENALTY * overshoot, cost, clamped))
            })
            .collect();
        *self.evaluations += points.len();
        let mut values = Vec::with_capacity(points.len());
        let mut improved = false;
        for outcome in outcomes {
            let (penalized, cost, clamped) = outcome?;
            if cost < self.best.0 {
                self.best.0 = cost;
                self.best.1 = (self.decode)(&clamped);
                improved = true;
            }
            values.push((penalized, cost));
        }
        if improved {
            self.trace.push(TraceEntry {
                evaluations: *self.evaluations,
                cost: self.best.0,
                params: self.best.1.clone(),
            });
        }
        Ok(values)
    }

    fn remaining(&self, eval_cap: usize) -> usize {
        eval_cap.saturating_sub(*self.evaluations)
    }
}

/// Evenly spaced positions on [-1, 1].
fn normalized_positions(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| ((2 * i) as f64 - (n - 1) as f64) / (n - 1) as f64)
        .collect()
}

/// Expands coarse detuning values into the full knot vector by cubic interpolation
/// over normalized positions, clamped to the knot box.
fn expand_coarse_knots(coarse: &[f64], n_knots: usize) -> Vec<f64> {
    let spline = CubicSpline::new(normalized_positions(coarse.len()), coarse.to_vec())
        .expect("coarse positions are strictly increasing");
    normalized_positions(n_knots)
        .into_iter()
        .map(|s| spline.value(s).clamp(KNOT_BOX.0, KNOT_BOX.1))
        .collect()
}

/// One CMA-ES run over a unit-box parameterization, ranking candidates by their
/// penalized cost. Stops on its evaluation cap, step-size collapse, or a stall of
/// its own best.
fn cma_phase(
    ctx: &mut SearchContext,
    rng: &mut ChaCha12Rng,
    mean: Vec<f64>,
    sigma0: f64,
    lambda: usize,
    eval_cap: usize,
) -> Result<()> {
    let mut state = CmaState::new(mean, sigma0, lambda);
    let mut stale = 0;
    let mut phase_best = f64::INFINITY;

    while ctx.remaining(eval_cap) >= lambda {
        let (raw, scales, vecs) = state.sample(rng);
        let values = ctx.eval_batch(&raw)?;

        let mut scored: Vec<(f64, usize)> = Vec::with_capacity(lambda);
        let mut improved_phase = false;
        for (k, &(penalized, cost)) in values.iter().enumerate() {
            scored.push((penalized, k));
            if cost < phase_best {
                phase_best = cost;
                improved_phase = true;
            }
        }
        if improved_phase {
            stale = 0;
        } else {
            stale += 1;
        }

        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite costs"));
        let selected: Vec<&Vec<f64>> = scored
            .iter()
            .take(state.weights.len())
            .map(|&(_, k)| &raw[k])
            .collect();
        state.update(&selected, &scales, &vecs);
        if state.sigma < 1e-5 || stale > STALE_LIMIT {
            break;
        }
    }
    Ok(())
}

/// Central-difference gradient of the penalized objective, one parallel batch of
/// 2 * dim evaluations. Returns None when the cap leaves no room for the batch.
fn fd_gradient(
    ctx: &mut SearchContext,
    x: &[f64],
    eval_cap: usize,
) -> Result<Option<Vec<f64>>> {
    let dim = x.len();
    if ctx.remaining(eval_cap) < 2 * dim {
        return Ok(None);
    }
    let mut points = Vec::with_capacity(2 * dim);
    for i in 0..dim {
        let mut plus = x.to_vec();
        plus[i] += FD_STEP;
        let mut minus = x.to_vec();
        minus[i] -= FD_STEP;
        points.push(plus);
        points.push(minus);
    }
    let values = ctx.eval_batch(&points)?;
    Ok(Some(
        (0..dim)
            .map(|i| (values[2 * i].0 - values[2 * i + 1].0) / (2.0 * FD_STEP))
            .collect(),
    ))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn identity_matrix(n: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

/// BFGS update of the inverse Hessian approximation:
/// H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T.
fn bfgs_update(hinv: &mut [Vec<f64>], s: &[f64], y: &[f64], rho: f64) {
    let n = s.len();
    let hy: Vec<f64> = (0..n).map(|i| dot(&hinv[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            hinv[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Quasi-Newton descent of the penalized objective with finite-difference
/// gradients and a backtracking Armijo line search. The gradient batches run in
/// parallel; the iteration itself is sequential and fully deterministic. Stops at
/// the evaluation cap, on gradient collapse, or when even a steepest-descent line
/// search fails to make progress.
fn bfgs_phase(ctx: &mut SearchContext, start: Vec<f64>, eval_cap: usize) -> Result<()> {
    let dim = start.len();
    let mut x = start;
    if ctx.remaining(eval_cap) < 1 {
        return Ok(());
    }
    let (mut fx, _) = ctx.eval_batch(&[x.clone()])?[0];
    let mut hinv = identity_matrix(dim);
    let mut fresh = true;
    let Some(mut g) = fd_gradient(ctx, &x, eval_cap)? else {
        return Ok(());
    };

    loop {
        let mut d: Vec<f64> = (0..dim).map(|i| -dot(&hinv[i], &g)).collect();
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            hinv = identity_matrix(dim);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        if slope > -1e-16 {
            break;
        }

        let mut step = 1.0;
        let mut accepted = None;
        while step >= LINE_SEARCH_FLOOR {
            if ctx.remaining(eval_cap) < 1 {
                return Ok(());
            }
            let xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (ft, _) = ctx.eval_batch(&[xt.clone()])?[0];
            if ft <= fx + ARMIJO_C1 * step * slope {
                accepted = Some((xt, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if fresh {
                break;
            }
            hinv = identity_matrix(dim);
            fresh = true;
            continue;
        };

        let Some(g_new) = fd_gradient(ctx, &x_new, eval_cap)? else {
            return Ok(());
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            bfgs_update(&mut hinv, &s, &y, 1.0 / sy);
            fresh = false;
        } else {
            hinv = identity_matrix(dim);
            fresh = true;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        if dot(&g, &g).sqrt() < 1e-8 {
            break;
        }
    }
    Ok(())
}

/// Derivative-free minimization of [`mirror_cost`], seeded and deterministic.
///
/// Three stages in the unit box. A CMA-ES stage first searches a smooth reduced
/// space: the envelope plus [`COARSE_KNOT_COUNT`] coarse detuning values that are
/// splined onto the full knot grid, which more than halves the dimension and speeds
/// up covariance adaptation along the narrow valley this landscape exhibits. A
/// quasi-Newton stage then frees every knot and descends from the coarse best with
/// finite-difference BFGS, which follows the valley floor far faster than a
/// sampling method. Leftover budget alternates CMA polish runs and BFGS descents
/// from the incumbent. Points are scored by cost at their box-clamped controls plus
/// a quadratic overshoot penalty, which keeps every stage honest at the box faces.
/// A budget that never beats the initial cost comes back with `improved` false
/// rather than as an error.
pub fn optimize_mirror(
    init: &ControlParams,
    cfg: &CostConfig,
    budget: usize,
    seed: u64,
) -> Result<MirrorOptimization> {
    if budget < MIN_BUDGET {
        return Err(DbdError::BudgetTooSmall(budget));
    }
    init.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let initial_cost = mirror_cost(init, cfg)?;
    let mut evaluations = 1;
    let mut best = (initial_cost, init.clone());
    let mut trace = vec![TraceEntry {
        evaluations,
        cost: initial_cost,
        params: init.clone(),
    }];

    let n_knots = init.knots.len();
    let t0 = init.t0;
    let init_spline = CubicSpline::new(normalized_positions(n_knots), init.knots.clone())
        .expect("knot positions are strictly increasing");
    let coarse_mean: Vec<f64> = [
        (init.omega_peak - OMEGA_BOX.0) / (OMEGA_BOX.1 - OMEGA_BOX.0),
        (init.tau - TAU_BOX.0) / (TAU_BOX.1 - TAU_BOX.0),
    ]
    .into_iter()
    .chain(
        normalized_positions(COARSE_KNOT_COUNT)
            .into_iter()
            .map(|s| (init_spline.value(s) - KNOT_BOX.0) / (KNOT_BOX.1 - KNOT_BOX.0)),
    )
    .collect();
    let coarse_decode = move |x: &[f64]| -> ControlParams {
        let coarse: Vec<f64> = x[2..]
            .iter()
            .map(|&v| KNOT_BOX.0 + v * (KNOT_BOX.1 - KNOT_BOX.0))
            .collect();
        ControlParams {
            omega_peak: OMEGA_BOX.0 + x[0] * (OMEGA_BOX.1 - OMEGA_BOX.0),
            tau: TAU_BOX.0 + x[1] * (TAU_BOX.1 - TAU_BOX.0),
            t0,
            knots: expand_coarse_knots(&coarse, n_knots),
        }
    };
    let full_decode = move |x: &[f64]| -> ControlParams { decode(x, t0) };

    let coarse_dim = 2 + COARSE_KNOT_COUNT;
    let coarse_lambda = 4 + (3.0 * (coarse_dim as f64).ln()).floor() as usize;
    let coarse_cap = (budget as f64 * COARSE_BUDGET_FRACTION) as usize;
    {
        let mut ctx = SearchContext {
            cfg,
            decode: &coarse_decode,
            evaluations: &mut evaluations,
            best: &mut best,
            trace: &mut trace,
        };
        cma_phase(&mut ctx, &mut rng, coarse_mean, COARSE_SIGMA0, coarse_lambda, coarse_cap)?;
    }

    let dim = 2 + n_knots;
    let lambda = 4 + (3.0 * (dim as f64).ln()).floor() as usize;
    let mut ctx = SearchContext {
        cfg,
        decode: &full_decode,
        evaluations: &mut evaluations,
        best: &mut best,
        trace: &mut trace,
    };
    let start = encode(&ctx.best.1);
    bfgs_phase(&mut ctx, start, budget)?;
    while ctx.remaining(budget) > 2 * dim + lambda {
        let polish_cap = *ctx.evaluations + ctx.remaining(budget) / 2;
        let mean = encode(&ctx.best.1);
        cma_phase(&mut ctx, &mut rng, mean, POLISH_SIGMA0, lambda, polish_cap)?;
        let start = encode(&ctx.best.1);
        bfgs_phase(&mut ctx, start, budget)?;
    }

    Ok(MirrorOptimization {
        improved: best.0 < initial_cost,
        best_cost: best.0,
        best: best.1,
        initial_cost,
        evaluations,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interferometer::{ideal_beam_splitter, ideal_mirror};
    use approx::assert_abs_diff_eq;

    #[test]
    fn swap_infidelity_spans_its_extremes() {
        let perfect = SMatrix5 { entries: ideal_mirror(), p: 0.0 };
        assert_eq!(swap_infidelity(&perfect), 0.0);
        let mut identity = [[num_complex::Complex64::new(0.0, 0.0); 5]; 5];
        for (i, row) in identity.iter_mut().enumerate() {
            row[i] = num_complex::Complex64::new(1.0, 0.0);
        }
        let none = SMatrix5 { entries: identity, p: 0.0 };
        assert_eq!(swap_infidelity(&none), 2.0);
        let half = SMatrix5 { entries: ideal_beam_splitter(), p: 0.0 };
        assert_abs_diff_eq!(swap_infidelity(&half), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn ds_mirror_init_sits_in_the_box_and_samples_the_sweep() {
        let init = ControlParams::ds_mirror_init();
        init.validate().unwrap();
        assert_eq!(init.knots.len(), DEFAULT_KNOT_COUNT);
        let times = init.knot_times();
        assert_abs_diff_eq!(times[0], -5.0 * init.tau, epsilon = 1e-15);
        assert_abs_diff_eq!(times[DEFAULT_KNOT_COUNT - 1], 5.0 * init.tau, epsilon = 1e-15);
        let pulse = init.pulse(0.0).unwrap();
        let ds = crate::pulses::Strategy::DetuningSweep.preset().unwrap();
        for s in [-3.2, -1.0, 0.0, 0.7, 3.2] {
            assert_abs_diff_eq!(
                pulse.detuning_at_offset(s),
                ds.mirror.detuning_at_offset(s),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn box_violations_name_the_offending_control() {
        let mut params = ControlParams::ds_mirror_init();
        params.omega_peak = 4.5;
        match params.validate() {
            Err(DbdError::ControlOutOfBox { name: "omega_peak", .. }) => {}
            other => panic!("expected omega_peak box error, got {other:?}"),
        }
        let mut params = ControlParams::ds_mirror_init();
        params.knots[3] = -8.4;
        match params.validate() {
            Err(DbdError::ControlOutOfBox { name: "knot", .. }) => {}
            other => panic!("expected knot box error, got {other:?}"),
        }
    }

    #[test]
    fn cost_samples_are_exactly_symmetric() {
        let cfg = CostConfig::default();
        let samples = cfg.samples();
        assert_eq!(samples.len(), 9);
        assert_eq!(samples[4], 0.0);
        for (a, b) in samples.iter().zip(samples.iter().rev()) {
            assert_eq!(*a, -*b);
        }
        assert_eq!(samples[0], -0.2);
    }

    #[test]
    fn per_sample_cost_term_is_parity_even() {
        let pulse = ControlParams::ds_mirror_init().pulse(0.0).unwrap();
        for p in [0.07, 0.13] {
            let plus =
                swap_infidelity(&pulse_smatrix(QuasiMomentum::new(p).unwrap(), &pulse).unwrap());
            let minus =
                swap_infidelity(&pulse_smatrix(QuasiMomentum::new(-p).unwrap(), &pulse).unwrap());
            assert_abs_diff_eq!(plus, minus, epsilon = 1e-8);
        }
    }

    #[test]
    fn budget_below_the_minimum_is_rejected() {
        let init = ControlParams::ds_mirror_init();
        match optimize_mirror(&init, &CostConfig::default(), 150, 1) {
            Err(DbdError::BudgetTooSmall(150)) => {}
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn short_run_improves_deterministically_with_a_monotone_trace() {
        let init = ControlParams::ds_mirror_init();
        let cfg = CostConfig { n_samples: 5, ..CostConfig::default() };
        let run = || optimize_mirror(&init, &cfg, MIN_BUDGET, 11).unwrap();
        let first = run();
        for pair in first.trace.windows(2) {
            assert!(pair[1].cost < pair[0].cost);
            assert!(pair[1].evaluations > pair[0].evaluations);
        }
        assert!(first.evaluations <= MIN_BUDGET);
        assert!(first.best_cost <= first.initial_cost);
        assert_eq!(first.improved, first.best_cost < first.initial_cost);
        let second = run();
        assert_eq!(first.best_cost, second.best_cost);
        assert_eq!(first.best.omega_peak, second.best.omega_peak);
        assert_eq!(first.best.tau, second.best.tau);
        assert_eq!(first.best.knots, second.best.knots);
        let log = format_optimization_log(&first);
        assert!(log.lines().count() >= 2);
        assert!(log.starts_with("# columns"));
    }
}
