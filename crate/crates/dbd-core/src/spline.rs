//! Natural cubic spline through sampled points, with an exact antiderivative.
//!
//! Used for sampled detuning profiles: C^2 inside the sample range, defined as exactly
//! zero outside it, so the accumulated laser phase stays available in closed form.

use crate::error::{DbdError, Result};

#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots (zero at both ends: natural boundary).
    m: Vec<f64>,
    /// Cumulative integral from xs[0] up to each knot.
    cumulative: Vec<f64>,
}

impl CubicSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(DbdError::ProfileTooShort {
                needed: 2,
                got: n.min(ys.len()),
            });
        }
        for i in 1..n {
            if xs[i] <= xs[i - 1] {
                return Err(DbdError::ProfileTimesNotIncreasing { index: i });
            }
        }

        // Thomas algorithm for the natural-spline tridiagonal system in the knot
        // second derivatives.
        let mut m = vec![0.0; n];
        if n > 2 {
            let rows = n - 2;
            let mut diag = vec![0.0; rows];
            let mut upper = vec![0.0; rows];
            let mut rhs = vec![0.0; rows];
            for i in 0..rows {
                let h0 = xs[i + 1] - xs[i];
                let h1 = xs[i + 2] - xs[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h1 - (ys[i + 1] - ys[i]) / h0);
            }
            for i in 1..rows {
                let lower = xs[i + 1] - xs[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[rows] = rhs[rows - 1] / diag[rows - 1];
            for i in (1..rows).rev() {
                m[i] = (rhs[i - 1] - upper[i - 1] * m[i + 1]) / diag[i - 1];
            }
        }

        let mut cumulative = vec![0.0; n];
        for i in 0..n - 1 {
            let h = xs[i + 1] - xs[i];
            let (y, b, c, d) = segment_coeffs(&xs, &ys, &m, i);
            cumulative[i + 1] = cumulative[i]
                + h * (y + h * (b / 2.0 + h * (c / 3.0 + h * d / 4.0)));
        }
        Ok(Self { xs, ys, m, cumulative })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    fn segment_index(&self, x: f64) -> usize {
        match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(i) => (i - 1).min(self.xs.len() - 2),
        }
    }

    /// Spline value; exactly zero outside the sampled range.
    pub fn value(&self, x: f64) -> f64 {
        if x < self.xs[0] || x > *self.xs.last().unwrap() {
            return 0.0;
        }
        let i = self.segment_index(x);
        let t = x - self.xs[i];
        let (y, b, c, d) = segment_coeffs(&self.xs, &self.ys, &self.m, i);
        y + t * (b + t * (c + t * d))
    }

    /// Antiderivative with F(xs[0]) = 0, constant outside the sampled range.
    fn antiderivative(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= *self.xs.last().unwrap() {
            return *self.cumulative.last().unwrap();
        }
        let i = self.segment_index(x);
        let t = x - self.xs[i];
        let (y, b, c, d) = segment_coeffs(&self.xs, &self.ys, &self.m, i);
        self.cumulative[i] + t * (y + t * (b / 2.0 + t * (c / 3.0 + t * d / 4.0)))
    }

    /// Exact integral of the spline over [a, b] (zero contribution outside the range).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.antiderivative(b) - self.antiderivative(a)
    }
}

fn segment_coeffs(xs: &[f64], ys: &[f64], m: &[f64], i: usize) -> (f64, f64, f64, f64) {
    let h = xs[i + 1] - xs[i];
    let b = (ys[i + 1] - ys[i]) / h - h * (2.0 * m[i] + m[i + 1]) / 6.0;
    let c = m[i] / 2.0;
    let d = (m[i + 1] - m[i]) / (6.0 * h);
    (ys[i], b, c, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn interpolates_knots_exactly() {
        let xs = vec![0.0, 0.7, 1.1, 2.0, 3.5];
        let ys = vec![1.0, -0.4, 0.3, 2.0, -1.0];
        let s = CubicSpline::new(xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_abs_diff_eq!(s.value(*x), *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn reproduces_a_straight_line() {
        let xs: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 3.0).collect();
        let s = CubicSpline::new(xs, ys).unwrap();
        assert_abs_diff_eq!(s.value(2.5), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.integral(0.0, 6.0), 2.0 * 18.0 - 18.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_outside_sample_range() {
        let s = CubicSpline::new(vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.value(-0.1), 0.0);
        assert_eq!(s.value(2.1), 0.0);
        assert_abs_diff_eq!(s.integral(-5.0, 7.0), s.integral(0.0, 2.0), epsilon = 1e-14);
    }

    #[test]
    fn integral_matches_dense_riemann_sum() {
        let xs = vec![-1.0, -0.2, 0.5, 1.3, 2.0];
        let ys = vec![0.3, -1.1, 0.9, 0.2, -0.5];
        let s = CubicSpline::new(xs, ys).unwrap();
        let n = 2_000_000;
        let (a, b) = (-1.0, 2.0);
        let h = (b - a) / n as f64;
        let mut sum = 0.0;
        for i in 0..n {
            sum += s.value(a + (i as f64 + 0.5) * h) * h;
        }
        assert_abs_diff_eq!(s.integral(a, b), sum, epsilon = 1e-8);
    }

    #[test]
    fn second_derivative_continuity_at_interior_knots() {
        let xs = vec![0.0, 1.0, 2.0, 3.0];
        let ys = vec![0.0, 1.0, -1.0, 0.5];
        let s = CubicSpline::new(xs.clone(), ys).unwrap();
        let eps = 1e-5;
        for &x in &xs[1..3] {
            let second = |t: f64| {
                (s.value(t + eps) - 2.0 * s.value(t) + s.value(t - eps)) / (eps * eps)
            };
            assert_abs_diff_eq!(second(x - 10.0 * eps), second(x + 10.0 * eps), epsilon = 1e-3);
        }
    }

    #[test]
    fn rejects_non_increasing_times() {
        assert!(matches!(
            CubicSpline::new(vec![0.0, 1.0, 1.0], vec![0.0, 0.0, 0.0]),
            Err(DbdError::ProfileTimesNotIncreasing { index: 2 })
        ));
    }
}
