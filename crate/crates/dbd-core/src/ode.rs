//! Propagator integration for small time-dependent Hamiltonians.
//!
//! Solves dU/dt = -i H(t) U for a dense n x n complex propagator with the
//! Dormand-Prince 5(4) embedded pair, either adaptively (FSAL, PI-free step control)
//! or at a fixed step as a cross-check. Matrices are stored row-major.

use num_complex::Complex64 as C64;

use crate::error::{DbdError, Result};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Writes the identity into a row-major dim x dim buffer.
pub fn identity(dim: usize, u: &mut [C64]) {
    u.fill(ZERO);
    for i in 0..dim {
        u[i * dim + i] = C64::new(1.0, 0.0);
    }
}

/// rhs = -i * H * U.
fn schroedinger_rhs(dim: usize, h: &[C64], u: &[C64], rhs: &mut [C64]) {
    for i in 0..dim {
        for j in 0..dim {
            let mut acc = ZERO;
            for k in 0..dim {
                acc += h[i * dim + k] * u[k * dim + j];
            }
            rhs[i * dim + j] = C64::new(acc.im, -acc.re);
        }
    }
}

/// Diagnostics from one adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b* difference for the embedded 4th-order error estimate.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates dU/dt = -i H(t) U from t_start to t_end in place, with local error
/// controlled to tol (used as both absolute and relative tolerance).
pub fn integrate_propagator<F>(
    dim: usize,
    t_start: f64,
    t_end: f64,
    tol: f64,
    hamiltonian: F,
    u: &mut [C64],
) -> Result<IntegrationStats>
where
    F: Fn(f64, &mut [C64]),
{
    let m = dim * dim;
    assert_eq!(u.len(), m, "propagator buffer has wrong size");
    let span = t_end - t_start;
    if span <= 0.0 {
        return Err(DbdError::NonPositiveTimeStep(span));
    }

    let mut h_buf = vec![ZERO; m];
    let mut stage = vec![ZERO; m];
    let mut k = vec![vec![ZERO; m]; 7];
    let mut y_new = vec![ZERO; m];

    let mut t = t_start;
    let mut dt = (span / 50.0).min(0.01);
    let mut stats = IntegrationStats { accepted: 0, rejected: 0 };
    let mut fresh_k1 = true;

    while t < t_end {
        if dt < 1e-12 * span {
            return Err(DbdError::IntegratorStalled { time: t });
        }
        dt = dt.min(t_end - t);

        if fresh_k1 {
            hamiltonian(t, &mut h_buf);
            let (k1, _) = k.split_at_mut(1);
            schroedinger_rhs(dim, &h_buf, u, &mut k1[0]);
        }

        macro_rules! stage_at {
            ($c:expr, $dest:expr, $($coeff:expr => $src:expr),+) => {{
                for e in 0..m {
                    let mut acc = u[e];
                    $(acc += k[$src][e] * C64::new(dt * $coeff, 0.0);)+
                    stage[e] = acc;
                }
                hamiltonian(t + $c * dt, &mut h_buf);
                let (head, tail) = k.split_at_mut($dest);
                schroedinger_rhs(dim, &h_buf, &stage, &mut tail[0]);
                let _ = head;
            }};
        }

        stage_at!(C2, 1, A21 => 0);
        stage_at!(C3, 2, A31 => 0, A32 => 1);
        stage_at!(C4, 3, A41 => 0, A42 => 1, A43 => 2);
        stage_at!(C5, 4, A51 => 0, A52 => 1, A53 => 2, A54 => 3);
        stage_at!(1.0, 5, A61 => 0, A62 => 1, A63 => 2, A64 => 3, A65 => 4);

        for e in 0..m {
            y_new[e] = u[e]
                + (k[0][e] * B1 + k[2][e] * B3 + k[3][e] * B4 + k[4][e] * B5 + k[5][e] * B6)
                    * dt;
        }
        hamiltonian(t + dt, &mut h_buf);
        {
            let (head, tail) = k.split_at_mut(6);
            schroedinger_rhs(dim, &h_buf, &y_new, &mut tail[0]);
            let _ = head;
        }

        let mut err_sq = 0.0;
        for e in 0..m {
            let err = (k[0][e] * E1
                + k[2][e] * E3
                + k[3][e] * E4
                + k[4][e] * E5
                + k[5][e] * E6
                + k[6][e] * E7)
                * dt;
            let scale = tol + tol * u[e].norm().max(y_new[e].norm());
            err_sq += (err.norm() / scale).powi(2);
        }
        let err_norm = (err_sq / m as f64).sqrt();

        if err_norm <= 1.0 {
            t += dt;
            if t_end - t < 1e-13 * span {
                t = t_end;
            }
            u.copy_from_slice(&y_new);
            k.swap(0, 6);
            fresh_k1 = false;
            stats.accepted += 1;
            let grow = if err_norm == 0.0 { 5.0 } else { 0.9 * err_norm.powf(-0.2) };
            dt *= grow.clamp(0.2, 5.0);
        } else {
            stats.rejected += 1;
            fresh_k1 = true;
            dt *= (0.9 * err_norm.powf(-0.2)).clamp(0.1, 0.9);
        }
    }
    Ok(stats)
}

/// Fixed-step cross-check integrator: the fifth-order Dormand-Prince solution taken at
/// a constant step, with no error control.
pub fn integrate_propagator_fixed<F>(
    dim: usize,
    t_start: f64,
    t_end: f64,
    dt: f64,
    hamiltonian: F,
    u: &mut [C64],
) -> Result<()>
where
    F: Fn(f64, &mut [C64]),
{
    if dt <= 0.0 {
        return Err(DbdError::NonPositiveTimeStep(dt));
    }
    let m = dim * dim;
    assert_eq!(u.len(), m, "propagator buffer has wrong size");
    let span = t_end - t_start;
    if span <= 0.0 {
        return Err(DbdError::NonPositiveTimeStep(span));
    }
    let n_steps = (span / dt).ceil() as usize;
    let dt = span / n_steps as f64;

    let mut h_buf = vec![ZERO; m];
    let mut stage = vec![ZERO; m];
    let mut k = vec![vec![ZERO; m]; 6];

    for step in 0..n_steps {
        let t = t_start + step as f64 * dt;
        hamiltonian(t, &mut h_buf);
        {
            let (k1, _) = k.split_at_mut(1);
            schroedinger_rhs(dim, &h_buf, u, &mut k1[0]);
        }

        macro_rules! stage_at {
            ($c:expr, $dest:expr, $($coeff:expr => $src:expr),+) => {{
                for e in 0..m {
                    let mut acc = u[e];
                    $(acc += k[$src][e] * C64::new(dt * $coeff, 0.0);)+
                    stage[e] = acc;
                }
                hamiltonian(t + $c * dt, &mut h_buf);
                let (head, tail) = k.split_at_mut($dest);
                schroedinger_rhs(dim, &h_buf, &stage, &mut tail[0]);
                let _ = head;
            }};
        }

        stage_at!(C2, 1, A21 => 0);
        stage_at!(C3, 2, A31 => 0, A32 => 1);
        stage_at!(C4, 3, A41 => 0, A42 => 1, A43 => 2);
        stage_at!(C5, 4, A51 => 0, A52 => 1, A53 => 2, A54 => 3);
        stage_at!(1.0, 5, A61 => 0, A62 => 1, A63 => 2, A64 => 3, A65 => 4);

        for e in 0..m {
            u[e] +=
                (k[0][e] * B1 + k[2][e] * B3 + k[3][e] * B4 + k[4][e] * B5 + k[5][e] * B6) * dt;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Two-level Rabi problem H = Omega sigma_x / 2: U(t) = cos(Omega t / 2) 1
    /// - i sin(Omega t / 2) sigma_x.
    fn rabi_h(omega: f64) -> impl Fn(f64, &mut [C64]) {
        move |_t, h: &mut [C64]| {
            h.fill(ZERO);
            h[1] = C64::new(0.5 * omega, 0.0);
            h[2] = C64::new(0.5 * omega, 0.0);
        }
    }

    #[test]
    fn adaptive_matches_rabi_closed_form() {
        let omega = 3.7;
        let t_end = 2.3;
        let mut u = vec![ZERO; 4];
        identity(2, &mut u);
        integrate_propagator(2, 0.0, t_end, 1e-10, rabi_h(omega), &mut u).unwrap();
        let half = 0.5 * omega * t_end;
        assert_abs_diff_eq!(u[0].re, half.cos(), epsilon = 1e-9);
        assert_abs_diff_eq!(u[1].im, -half.sin(), epsilon = 1e-9);
        assert_abs_diff_eq!(u[3].re, half.cos(), epsilon = 1e-9);
    }

    #[test]
    fn adaptive_handles_time_dependent_drive() {
        // H = f(t) sigma_x / 2 with f = sin^2; U depends only on the area of f.
        let f = |t: f64| t.sin().powi(2);
        let area = |t: f64| 0.5 * t - 0.25 * (2.0 * t).sin();
        let t_end = 4.0;
        let mut u = vec![ZERO; 4];
        identity(2, &mut u);
        integrate_propagator(
            2,
            0.0,
            t_end,
            1e-11,
            |t, h: &mut [C64]| {
                h.fill(ZERO);
                h[1] = C64::new(0.5 * f(t), 0.0);
                h[2] = C64::new(0.5 * f(t), 0.0);
            },
            &mut u,
        )
        .unwrap();
        let half = 0.5 * area(t_end);
        assert_abs_diff_eq!(u[0].re, half.cos(), epsilon = 1e-9);
        assert_abs_diff_eq!(u[1].im, -half.sin(), epsilon = 1e-9);
    }

    #[test]
    fn propagator_stays_unitary() {
        let mut u = vec![ZERO; 4];
        identity(2, &mut u);
        integrate_propagator(2, 0.0, 10.0, 1e-10, rabi_h(2.0), &mut u).unwrap();
        // U^dagger U = 1.
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = ZERO;
                for k in 0..2 {
                    acc += u[k * 2 + i].conj() * u[k * 2 + j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(acc.re, want, epsilon = 1e-9);
                assert_abs_diff_eq!(acc.im, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn fixed_step_agrees_with_adaptive() {
        let mut ua = vec![ZERO; 4];
        let mut uf = vec![ZERO; 4];
        identity(2, &mut ua);
        identity(2, &mut uf);
        integrate_propagator(2, 0.0, 3.0, 1e-12, rabi_h(2.4), &mut ua).unwrap();
        integrate_propagator_fixed(2, 0.0, 3.0, 1e-3, rabi_h(2.4), &mut uf).unwrap();
        for e in 0..4 {
            assert!((ua[e] - uf[e]).norm() < 1e-8);
        }
    }

    #[test]
    fn rejects_degenerate_spans() {
        let mut u = vec![ZERO; 4];
        identity(2, &mut u);
        assert!(integrate_propagator(2, 1.0, 1.0, 1e-10, rabi_h(1.0), &mut u).is_err());
        assert!(integrate_propagator_fixed(2, 0.0, 1.0, 0.0, rabi_h(1.0), &mut u).is_err());
    }
}
