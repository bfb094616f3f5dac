//! Adaptive Gauss-Legendre quadrature on bounded intervals.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORDER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Target absolute error over the whole interval.
    pub tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            tol: 1e-6,
            max_subdivisions: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error_estimate: f64,
    pub intervals: usize,
}

/// Nodes and weights on `[-1, 1]`, from Newton iteration on the Legendre
/// recurrence.
fn rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = ORDER;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        out
    })
}

fn gauss<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    half * rule()
        .iter()
        .map(|&(x, w)| w * f(mid + half * x))
        .sum::<f64>()
}

/// `∫_a^b f`, bisecting until each piece's two-half estimate agrees with its
/// whole-interval estimate to within its share of `spec.tol`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> Result<QuadResult> {
    if !(spec.tol > 0.0) {
        return Err(Error::Config(format!(
            "quadrature tolerance must be positive, got {}",
            spec.tol
        )));
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Config("quadrature needs a bounded interval".into()));
    }
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error_estimate: 0.0,
            intervals: 0,
        });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let width = hi - lo;
    let mut stack = vec![(lo, hi, gauss(&f, lo, hi))];
    let mut value = 0.0;
    let mut err = 0.0;
    let mut intervals = 0;
    let mut splits = 0;
    while let Some((x0, x1, whole)) = stack.pop() {
        let m = 0.5 * (x0 + x1);
        let left = gauss(&f, x0, m);
        let right = gauss(&f, m, x1);
        let e = (left + right - whole).abs();
        let budget = spec.tol * (x1 - x0) / width;
        if e <= budget || (x1 - x0) < 1e-14 * width.max(1.0) {
            value += left + right;
            err += e;
            intervals += 1;
            continue;
        }
        splits += 1;
        if splits > spec.max_subdivisions {
            return Err(Error::Degenerate(format!(
                "quadrature on [{lo}, {hi}] did not reach tolerance {} within {} subdivisions",
                spec.tol, spec.max_subdivisions
            )));
        }
        stack.push((m, x1, right));
        stack.push((x0, m, left));
    }
    Ok(QuadResult {
        value: sign * value,
        error_estimate: err,
        intervals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_is_exact_for_polynomials() {
        let w: f64 = rule().iter().map(|r| r.1).sum();
        assert!((w - 2.0).abs() < 1e-14);
        // Degree 2n-1 = 31 is integrated exactly.
        let v = gauss(&|x: f64| x.powi(30), -1.0, 1.0);
        assert!((v - 2.0 / 31.0).abs() < 1e-14);
    }

    #[test]
    fn integrates_standard_functions() {
        let s = QuadratureSpec {
            tol: 1e-12,
            ..QuadratureSpec::default()
        };
        let r = integrate(f64::sin, 0.0, std::f64::consts::PI, &s).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
        let r = integrate(|x: f64| x.sqrt(), 0.0, 1.0, &s).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-11);
        let r = integrate(|x: f64| x, 1.0, 0.0, &s).unwrap();
        assert!((r.value + 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_spec() {
        let bad = QuadratureSpec {
            tol: 0.0,
            ..QuadratureSpec::default()
        };
        assert!(integrate(|x| x, 0.0, 1.0, &bad).is_err());
        assert!(integrate(|x| x, 0.0, f64::INFINITY, &QuadratureSpec::default()).is_err());
        let tight = QuadratureSpec {
            tol: 1e-12,
            max_subdivisions: 3,
        };
        assert!(integrate(|x: f64| (1.0 / (x + 1e-3)).sin(), 0.0, 1.0, &tight).is_err());
    }
}
