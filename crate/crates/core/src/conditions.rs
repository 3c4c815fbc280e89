//! Finite-size measurements of the norm and moment conditions, and log-log
//! exponent fits across a grid of sizes.
//!
//! Each [`ConditionReport`] is computed from the exact inverse action carried
//! by an [`InverseHandle`], so no factorization error enters the Gaussian and
//! SVD families. Fits average each quantity geometrically over seeds before
//! regressing `log(value)` on `log(n)`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::ensembles::{replica_seed, EnsembleSpec, InverseHandle};
use crate::error::{Error, Result};
use crate::linalg::{dot, hadamard, norm2_sq, norm_1, norm_inf, Lu, Matrix};
use crate::stats::{linear_fit, RunningMoments};
use crate::system::{PhysicalSystem, Selection};

/// Largest dimension handled by a dense SVD in [`spectral_norm`].
pub const SVD_DIM_LIMIT: usize = 1024;
pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;

/// Exponent above which a max-norm quantity is flagged as possibly resonant.
pub const RESONANCE_FLAG_EXPONENT: f64 = 0.2;

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    if !m.is_finite() {
        return Err(Error::NonFinite("spectral_norm input"));
    }
    if m.rows() == 0 || m.cols() == 0 {
        return Ok(0.0);
    }
    if m.rows().min(m.cols()) <= SVD_DIM_LIMIT {
        Ok(spectral_norm_svd(m))
    } else {
        spectral_norm_power(m, POWER_TOL, POWER_MAX_ITER)
    }
}

pub fn spectral_norm_svd(m: &Matrix) -> f64 {
    m.to_nalgebra().singular_values().max()
}

/// Power iteration on `M^T M`, stopping when the relative change of the
/// Rayleigh quotient drops below `tol`.
pub fn spectral_norm_power(m: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    let n = m.cols();
    if n == 0 || m.rows() == 0 {
        return Ok(0.0);
    }
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * libm::sin(1.0 + i as f64))
        .collect();
    normalize(&mut v);
    let mut prev = f64::NAN;
    for it in 1..=max_iter {
        let mv = m.mul_vec(&v);
        let lambda = norm2_sq(&mv);
        if lambda == 0.0 {
            return Ok(0.0);
        }
        if (lambda - prev).abs() <= tol * lambda {
            return Ok(libm::sqrt(lambda));
        }
        prev = lambda;
        v = m.tr_mul_vec(&mv);
        normalize(&mut v);
        if it == max_iter {
            break;
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: max_iter,
        estimate: libm::sqrt(prev),
    })
}

fn normalize(v: &mut [f64]) {
    let s = libm::sqrt(norm2_sq(v));
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

/// Measured size of every condition quantity for one problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    pub n: usize,
    /// `||A^{-1}||_2`
    pub inv_norm2: f64,
    pub sel_norm_inf: f64,
    pub sel_norm_1: f64,
    pub sel_norm_2: f64,
    pub b_inf: f64,
    pub b_1: f64,
    pub c_inf: f64,
    pub c_1: f64,
    /// `||B^T (A^{-1} b ⊙ A^{-T} c)||_2^2`
    pub grad_core_sq: f64,
    /// `|c^T A^{-1} b|`
    pub overlap0: f64,
    /// `||A^{-1}||_max`
    pub inv_max: f64,
    /// `||A^{-T} c||_inf`
    pub adj0_inf: f64,
    /// `grad_core_sq == 0`, a measure-zero event for random draws.
    pub degenerate: bool,
}

impl ConditionReport {
    pub const FIELD_NAMES: [&'static str; 12] = [
        "inv_norm2",
        "B_norm_inf",
        "B_norm_1",
        "B_norm_2",
        "b_inf",
        "b_1",
        "c_inf",
        "c_1",
        "grad_core_sq",
        "overlap0",
        "inv_max",
        "adj0_inf",
    ];

    /// Values in [`Self::FIELD_NAMES`] order.
    pub fn values(&self) -> [f64; 12] {
        [
            self.inv_norm2,
            self.sel_norm_inf,
            self.sel_norm_1,
            self.sel_norm_2,
            self.b_inf,
            self.b_1,
            self.c_inf,
            self.c_1,
            self.grad_core_sq,
            self.overlap0,
            self.inv_max,
            self.adj0_inf,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::FIELD_NAMES
            .iter()
            .position(|f| *f == name)
            .map(|i| self.values()[i])
    }
}

enum InverseAction<'a> {
    Gaussian(&'a Matrix),
    Svd {
        r: &'a Matrix,
        q: &'a Matrix,
        inv_s: Vec<f64>,
    },
    Dense(Matrix),
}

impl InverseAction<'_> {
    fn apply(&self, b: &[f64]) -> Vec<f64> {
        match self {
            Self::Gaussian(g) => g.mul_vec(b),
            Self::Svd { r, q, inv_s } => q.mul_vec(&hadamard(inv_s, &r.tr_mul_vec(b))),
            Self::Dense(inv) => inv.mul_vec(b),
        }
    }

    fn apply_transpose(&self, c: &[f64]) -> Vec<f64> {
        match self {
            Self::Gaussian(g) => g.tr_mul_vec(c),
            Self::Svd { r, q, inv_s } => r.mul_vec(&hadamard(inv_s, &q.tr_mul_vec(c))),
            Self::Dense(inv) => inv.tr_mul_vec(c),
        }
    }

    fn norm2(&self) -> Result<f64> {
        match self {
            Self::Gaussian(g) => spectral_norm(g),
            Self::Svd { inv_s, .. } => Ok(norm_inf(inv_s)),
            Self::Dense(inv) => spectral_norm(inv),
        }
    }

    fn max_abs(&self) -> f64 {
        match self {
            Self::Gaussian(g) => g.max_abs(),
            Self::Svd { r, q, inv_s } => {
                let mut qs = (*q).clone();
                qs.scale_cols(inv_s);
                qs.matmul(&r.transpose()).max_abs()
            }
            Self::Dense(inv) => inv.max_abs(),
        }
    }
}

/// Fills a [`ConditionReport`] using the exact inverse action in `handle`.
pub fn check_conditions(
    system: &PhysicalSystem,
    c: &[f64],
    handle: &InverseHandle,
) -> Result<ConditionReport> {
    let n = system.n();
    if c.len() != n {
        return Err(Error::DimensionMismatch {
            what: "overlap vector c",
            expected: n,
            got: c.len(),
        });
    }
    let action = match handle {
        InverseHandle::Gaussian { g } => {
            check_square(g, n, "handle G")?;
            InverseAction::Gaussian(g)
        }
        InverseHandle::Svd { r, q, s } => {
            check_square(r, n, "handle R")?;
            check_square(q, n, "handle Q")?;
            if s.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "handle s",
                    expected: n,
                    got: s.len(),
                });
            }
            if s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::NotInDomain { rcond: 0.0 });
            }
            InverseAction::Svd {
                r,
                q,
                inv_s: s.iter().map(|v| 1.0 / v).collect(),
            }
        }
        InverseHandle::Dense => {
            let lu = Lu::factor(system.physics().clone());
            let rcond = lu.rcond();
            if !(rcond > system.domain_tolerance()) {
                return Err(Error::NotInDomain { rcond });
            }
            InverseAction::Dense(lu.inverse())
        }
    };

    let b = system.source();
    let x0 = action.apply(b);
    let a0 = action.apply_transpose(c);
    let core = system.select_transpose(&hadamard(&x0, &a0));
    let grad_core_sq = norm2_sq(&core);
    let (sel_norm_inf, sel_norm_1, sel_norm_2) = match system.selection() {
        Selection::Identity => (1.0, 1.0, 1.0),
        Selection::Dense(bm) => (bm.norm_inf(), bm.norm_1(), spectral_norm(bm)?),
    };
    let report = ConditionReport {
        n,
        inv_norm2: action.norm2()?,
        sel_norm_inf,
        sel_norm_1,
        sel_norm_2,
        b_inf: norm_inf(b),
        b_1: norm_1(b),
        c_inf: norm_inf(c),
        c_1: norm_1(c),
        grad_core_sq,
        overlap0: dot(c, &x0).abs(),
        inv_max: action.max_abs(),
        adj0_inf: norm_inf(&a0),
        degenerate: grad_core_sq == 0.0,
    };
    if report.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("condition report"));
    }
    Ok(report)
}

fn check_square(m: &Matrix, n: usize, what: &'static str) -> Result<()> {
    if m.rows() != n || m.cols() != n {
        return Err(Error::DimensionMismatch {
            what,
            expected: n,
            got: m.rows().max(m.cols()),
        });
    }
    Ok(())
}

/// Seed-aggregated value at one size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitPoint {
    pub n: usize,
    /// Geometric mean over the positive samples.
    pub value: f64,
    /// Standard error of the mean of `log(value)`.
    pub log_stderr: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    pub quantity: String,
    pub points: Vec<FitPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Samples dropped for being zero, negative or non-finite.
    pub excluded: usize,
}

/// Fits `log(value) = intercept + slope * log(n)` after geometric averaging
/// per `n`.
pub fn fit_scaling(quantity: &str, samples: &[(usize, f64)]) -> Result<ScalingFit> {
    let mut groups: BTreeMap<usize, RunningMoments> = BTreeMap::new();
    let mut excluded = 0;
    for &(n, v) in samples {
        if n == 0 || !(v > 0.0) || !v.is_finite() {
            excluded += 1;
            continue;
        }
        groups.entry(n).or_default().push(libm::log(v));
    }
    if groups.len() < 3 {
        return Err(Error::InsufficientData(alloc::format!(
            "{quantity}: need 3 distinct n with positive values, got {}",
            groups.len()
        )));
    }
    let points: Vec<FitPoint> = groups
        .iter()
        .map(|(&n, m)| FitPoint {
            n,
            value: libm::exp(m.mean()),
            log_stderr: m.stderr(),
            count: m.count() as usize,
        })
        .collect();
    let xs: Vec<f64> = groups.keys().map(|&n| libm::log(n as f64)).collect();
    let ys: Vec<f64> = groups.values().map(|m| m.mean()).collect();
    let fit = linear_fit(&xs, &ys)?;
    Ok(ScalingFit {
        quantity: quantity.into(),
        points,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        excluded,
    })
}

/// Quantities whose exponents a condition study fits.
pub const FITTED_QUANTITIES: [&str; 5] =
    ["inv_norm2", "grad_core_sq", "overlap0", "inv_max", "adj0_inf"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionRecord {
    pub n: usize,
    pub replica: u64,
    pub seed: u64,
    pub report: ConditionReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionStudy {
    pub records: Vec<ConditionRecord>,
    pub fits: Vec<ScalingFit>,
}

/// Report for replica `replica` at size `n`; seeds follow
/// [`replica_seed`].
pub fn condition_record(
    template: &EnsembleSpec,
    n: usize,
    replica: u64,
    master_seed: u64,
) -> Result<ConditionRecord> {
    let seed = replica_seed(master_seed, n, replica);
    let spec = template.at(n, seed);
    let inst = spec.generate()?;
    let report = check_conditions(&inst.system, &inst.c, &inst.handle)?;
    Ok(ConditionRecord {
        n,
        replica,
        seed,
        report,
    })
}

/// Sorts records by `(n, replica)` and fits [`FITTED_QUANTITIES`].
pub fn fit_condition_records(records: &mut [ConditionRecord]) -> Result<Vec<ScalingFit>> {
    records.sort_by_key(|r| (r.n, r.replica));
    FITTED_QUANTITIES
        .iter()
        .map(|q| {
            let samples: Vec<(usize, f64)> = records
                .iter()
                .map(|r| (r.n, r.report.get(q).unwrap_or(f64::NAN)))
                .collect();
            fit_scaling(q, &samples)
        })
        .collect()
}

pub fn condition_study(
    template: &EnsembleSpec,
    ns: &[usize],
    seeds: u64,
    master_seed: u64,
) -> Result<ConditionStudy> {
    let mut records = Vec::with_capacity(ns.len() * seeds as usize);
    for &n in ns {
        for r in 0..seeds {
            records.push(condition_record(template, n, r, master_seed)?);
        }
    }
    let fits = fit_condition_records(&mut records)?;
    Ok(ConditionStudy { records, fits })
}
