//! Scalar cost functions of the overlap `c^T x`.
//!
//! The family used throughout is
//!
//! ```text
//! f(x) = (mu/2) (x - t)^2 + (L - mu) log cosh(x - t)
//! ```
//!
//! whose second derivative `mu + (L - mu) sech^2(x - t)` lies in `[mu, L]`
//! for every `x`. It is therefore `L`-smooth and `mu`-strongly convex with
//! minimum value `f* = 0` attained at `x* = t`. With `L == mu` it reduces to
//! the plain quadratic.

use alloc::format;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSpec {
    target: f64,
    mu: f64,
    smoothness: f64,
}

/// Value, slope and curvature of a cost at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEval {
    pub value: f64,
    pub slope: f64,
    pub curvature: f64,
}

impl CostSpec {
    pub fn new(target: f64, mu: f64, smoothness: f64) -> Result<Self> {
        if !target.is_finite() || !mu.is_finite() || !smoothness.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "cost parameters must be finite (t={target}, mu={mu}, L={smoothness})"
            )));
        }
        if !(mu > 0.0 && smoothness >= mu) {
            return Err(Error::InvalidConfig(format!(
                "cost needs 0 < mu <= L, got mu={mu}, L={smoothness}"
            )));
        }
        Ok(Self {
            target,
            mu,
            smoothness,
        })
    }

    pub fn quadratic(target: f64, mu: f64) -> Result<Self> {
        Self::new(target, mu, mu)
    }

    /// Minimizer `x*`.
    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn with_target(self, target: f64) -> Result<Self> {
        Self::new(target, self.mu, self.smoothness)
    }

    pub fn eval(&self, x: f64) -> CostEval {
        let u = x - self.target;
        let extra = self.smoothness - self.mu;
        CostEval {
            value: 0.5 * self.mu * (u * u) + extra * log_cosh(u),
            slope: self.mu * u + extra * libm::tanh(u),
            curvature: self.mu + extra * sech_sq(u),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).value
    }

    pub fn slope(&self, x: f64) -> f64 {
        self.eval(x).slope
    }
}

/// `log(cosh(u))` without overflow or cancellation.
pub(crate) fn log_cosh(u: f64) -> f64 {
    let a = u.abs();
    if a < 1.0 {
        // cosh(a) - 1 = 2 sinh^2(a/2)
        let s = libm::sinh(0.5 * a);
        libm::log1p(2.0 * s * s)
    } else {
        a + libm::log1p(libm::exp(-2.0 * a)) - core::f64::consts::LN_2
    }
}

fn sech_sq(u: f64) -> f64 {
    let e = libm::exp(-2.0 * u.abs());
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

/// A scalar cost with known curvature bounds.
pub trait ScalarCost {
    fn eval(&self, x: f64) -> CostEval;
    fn strong_convexity(&self) -> f64;
    fn smoothness(&self) -> f64;
    fn min_value(&self) -> f64;
}

impl ScalarCost for CostSpec {
    fn eval(&self, x: f64) -> CostEval {
        CostSpec::eval(self, x)
    }

    fn strong_convexity(&self) -> f64 {
        self.mu
    }

    fn smoothness(&self) -> f64 {
        self.smoothness
    }

    fn min_value(&self) -> f64 {
        0.0
    }
}

/// Outcome of [`verify_convexity_envelope`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeReport {
    pub points_checked: usize,
    pub pairs_checked: usize,
    /// Smallest observed `f'(x)^2 - 2 mu (f(x) - f*)`; zero for quadratics.
    pub min_pl_margin: f64,
}

const ENVELOPE_TOL: f64 = 1e-12;

/// Checks the curvature bounds, the PL inequality, the gradient bound
/// `f'^2 <= (2 L^2 / mu)(f - f*)` and the quadratic upper bound
/// `f(x) <= f(y) + f'(y)(x - y) + (L/2)(x - y)^2` on a grid.
pub fn verify_convexity_envelope<C: ScalarCost>(cost: &C, grid: &[f64]) -> Result<EnvelopeReport> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    let mu = cost.strong_convexity();
    let l = cost.smoothness();
    let fmin = cost.min_value();
    let mut min_pl_margin = f64::INFINITY;

    for &x in grid {
        let e = cost.eval(x);
        let gap = e.value - fmin;
        let slope_sq = e.slope * e.slope;
        let tol = ENVELOPE_TOL * (1.0 + slope_sq.abs() + gap.abs());
        let fail = |check: &str| Error::ReportedViolation {
            x,
            check: check.into(),
        };
        if e.curvature < mu - ENVELOPE_TOL || e.curvature > l + ENVELOPE_TOL {
            return Err(fail("curvature outside [mu, L]"));
        }
        if gap < -tol {
            return Err(fail("value below the minimum"));
        }
        if 2.0 * mu * gap > slope_sq + tol {
            return Err(fail("PL inequality"));
        }
        if slope_sq > 2.0 * l * l / mu * gap + tol {
            return Err(fail("gradient bound 2L^2/mu"));
        }
        min_pl_margin = min_pl_margin.min(slope_sq - 2.0 * mu * gap);
    }

    let mut pairs_checked = 0;
    let n = grid.len();
    let mut check_pair = |x: f64, y: f64| -> Result<()> {
        let ex = cost.eval(x);
        let ey = cost.eval(y);
        let d = x - y;
        let bound = ey.value + ey.slope * d + 0.5 * l * d * d;
        let tol = ENVELOPE_TOL * (1.0 + ex.value.abs() + bound.abs());
        if ex.value > bound + tol {
            return Err(Error::ReportedViolation {
                x,
                check: format!("quadratic upper bound against y = {y}"),
            });
        }
        pairs_checked += 1;
        Ok(())
    };
    for i in 0..n {
        let j = (i + 1) % n;
        let k = n - 1 - i;
        check_pair(grid[i], grid[j])?;
        check_pair(grid[j], grid[i])?;
        check_pair(grid[i], grid[k])?;
    }

    Ok(EnvelopeReport {
        points_checked: n,
        pairs_checked,
        min_pl_margin,
    })
}
