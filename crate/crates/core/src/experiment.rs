//! Convergence and resonance studies over random problem families.
//!
//! Each `(n, replica)` run is a pure function of the configuration and the
//! master seed, so callers may evaluate runs in any order or in parallel and
//! then summarize them with [`summarize_convergence`] and
//! [`summarize_resonance`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::conditions::{fit_scaling, ScalingFit, RESONANCE_FLAG_EXPONENT};
use crate::cost::CostSpec;
use crate::ensembles::{replica_seed, EnsembleSpec, InverseHandle, ProblemInstance};
use crate::error::{Error, Result};
use crate::gd::{default_step_size, resonance_summary, run_gd, GdConfig, Status, Trajectory};
use crate::linalg::{dot, norm_inf, Lu};
use crate::stats::{linear_fit, median, LinearFit};
use crate::system::DesignProblem;

/// Steps checked for monotone descent before accepting a step size.
pub const MONOTONE_WINDOW: usize = 50;
pub const MAX_HALVINGS: u32 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Family template; `n` and `seed` are replaced per run.
    pub ensemble: EnsembleSpec,
    pub ns: Vec<usize>,
    pub seeds: u64,
    pub master_seed: u64,
    /// `mu` and `L` of the cost; its target is the offset added to
    /// `c^T A^{-1} b`.
    pub cost: CostSpec,
    pub alpha: f64,
    pub gamma: f64,
    pub c0: f64,
    /// Target cost gap; runs stop once it is reached.
    pub eps: f64,
    /// Extra gap thresholds whose first hitting times are recorded.
    pub eps_ladder: Vec<f64>,
    /// Step cap; `None` uses [`default_step_cap`].
    pub max_steps: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(ensemble: EnsembleSpec, ns: Vec<usize>, seeds: u64) -> Result<Self> {
        let cfg = Self {
            ensemble,
            ns,
            seeds,
            master_seed: 0,
            cost: CostSpec::new(1.0, 1.0, 2.0)?,
            alpha: 0.5,
            gamma: 0.5,
            c0: 0.5,
            eps: 1e-6,
            eps_ladder: alloc::vec![1e-2, 1e-4],
            max_steps: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.ns.is_empty() {
            return bad("ns must be non-empty".into());
        }
        if self.ns.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("ns must be strictly increasing, got {:?}", self.ns));
        }
        if self.ns[0] == 0 {
            return bad("ns must be positive".into());
        }
        if self.seeds == 0 {
            return bad("seeds must be >= 1".into());
        }
        if !(self.eps > 0.0) || self.eps_ladder.iter().any(|e| !(*e > 0.0)) {
            return bad("eps thresholds must be > 0".into());
        }
        if self.max_steps == Some(0) {
            return bad("step cap must be >= 1".into());
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return bad(format!("c0 must be positive, got {}", self.c0));
        }
        if !self.alpha.is_finite() || !self.gamma.is_finite() {
            return bad("alpha and gamma must be finite".into());
        }
        self.ensemble.at(self.ns[0], 0).validate()
    }

    /// All recorded thresholds, largest first, ending with `eps`.
    pub fn thresholds(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.eps_ladder.iter().copied().filter(|e| *e > self.eps).collect();
        t.push(self.eps);
        t.sort_by(|a, b| b.total_cmp(a));
        t.dedup();
        t
    }

    pub fn step_cap(&self, n: usize) -> usize {
        self.max_steps.unwrap_or_else(|| default_step_cap(n, self.eps))
    }
}

/// `ceil(200 n log(1/eps))`, at least 1.
pub fn default_step_cap(n: usize, eps: f64) -> usize {
    let v = 200.0 * n as f64 * libm::log(1.0 / eps).max(1.0);
    (libm::ceil(v) as usize).max(1)
}

/// Geometric decay fitted over the first half of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionFit {
    /// Fitted per-step ratio `rho` in `gap_t ~ gap_0 rho^t`.
    pub ratio: f64,
    /// `n (1 - rho)`
    pub c_fit: f64,
    pub r_squared: f64,
    /// Largest observed `gap_t / gap_{t-1}` in the window.
    pub max_ratio: f64,
    /// `n (1 - max_ratio)`
    pub c_bound: f64,
    pub window: usize,
}

/// Fits `log gap_t` against `t` for `t <= horizon / 2`.
pub fn contraction_fit(traj: &Trajectory, n: usize, horizon: usize) -> Option<ContractionFit> {
    let half = horizon / 2;
    let rows: Vec<_> = traj
        .rows
        .iter()
        .take_while(|r| r.step <= half)
        .filter(|r| r.cost_gap > 0.0)
        .collect();
    if rows.len() < 3 {
        return None;
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.step as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| libm::log(r.cost_gap)).collect();
    let fit = linear_fit(&xs, &ys).ok()?;
    let ratio = libm::exp(fit.slope);
    let max_ratio = rows
        .windows(2)
        .map(|w| w[1].cost_gap / w[0].cost_gap)
        .fold(f64::NEG_INFINITY, f64::max);
    let nf = n as f64;
    Some(ContractionFit {
        ratio,
        c_fit: nf * (1.0 - ratio),
        r_squared: fit.r_squared,
        max_ratio,
        c_bound: nf * (1.0 - max_ratio),
        window: rows.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRun {
    pub n: usize,
    pub replica: u64,
    pub seed: u64,
    /// Step size actually used.
    pub eta: f64,
    pub c0: f64,
    pub halvings: u32,
    pub status: Status,
    pub steps_taken: usize,
    /// First hitting step of each threshold in [`ExperimentConfig::thresholds`].
    pub hits: Vec<(f64, Option<usize>)>,
    pub steps_to_eps: Option<usize>,
    pub initial_gap: f64,
    pub final_gap: f64,
    /// `(final_gap / initial_gap)^(1 / steps_taken)`
    pub mean_contraction: f64,
    pub contraction: Option<ContractionFit>,
    pub x0_inf: f64,
    pub max_x_inf: f64,
    pub max_a_inf: f64,
    pub max_theta_inf: f64,
    /// `||A^{-1}||_max`
    pub inv_max: f64,
    /// Set when the problem could not be generated or solved.
    pub error: Option<String>,
}

impl ConvergenceRun {
    pub fn failed(&self) -> bool {
        matches!(self.status, Status::Failed { .. }) || self.error.is_some()
    }

    /// Hit the step cap before reaching the target gap.
    pub fn capped(&self) -> bool {
        !self.failed() && self.steps_to_eps.is_none()
    }

    fn broken(n: usize, replica: u64, seed: u64, err: Error) -> Self {
        Self {
            n,
            replica,
            seed,
            eta: f64::NAN,
            c0: f64::NAN,
            halvings: 0,
            status: Status::Failed { step: 0 },
            steps_taken: 0,
            hits: Vec::new(),
            steps_to_eps: None,
            initial_gap: f64::NAN,
            final_gap: f64::NAN,
            mean_contraction: f64::NAN,
            contraction: None,
            x0_inf: f64::NAN,
            max_x_inf: f64::NAN,
            max_a_inf: f64::NAN,
            max_theta_inf: f64::NAN,
            inv_max: f64::NAN,
            error: Some(format!("{err}")),
        }
    }
}

fn inverse_max(inst: &ProblemInstance) -> f64 {
    match &inst.handle {
        InverseHandle::Gaussian { g } => g.max_abs(),
        InverseHandle::Svd { r, q, s } => {
            let mut qs = q.clone();
            let inv: Vec<f64> = s.iter().map(|v| 1.0 / v).collect();
            qs.scale_cols(&inv);
            qs.matmul(&r.transpose()).max_abs()
        }
        InverseHandle::Dense => Lu::factor(inst.system.physics().clone()).inverse().max_abs(),
    }
}

fn is_monotone(traj: &Trajectory, window: usize) -> bool {
    traj.rows
        .windows(2)
        .take(window)
        .all(|w| w[1].cost <= w[0].cost + 1e-12 * (1.0 + w[0].cost.abs()))
}

/// Builds the design problem for one run: cost target `c^T A^{-1} b + offset`.
pub fn design_problem(cfg: &ExperimentConfig, inst: &ProblemInstance) -> Result<DesignProblem> {
    let x0 = inst.system.forward_solve(&alloc::vec![0.0; inst.system.m()])?;
    let target = dot(&inst.c, &x0) + cfg.cost.target();
    let cost = cfg.cost.with_target(target)?;
    DesignProblem::new(inst.system.clone(), inst.c.clone(), cost)
}

/// Runs gradient descent on replica `replica` at size `n`.
///
/// `c0` is halved (at most [`MAX_HALVINGS`] times) while the cost fails to
/// decrease monotonically over the first [`MONOTONE_WINDOW`] steps.
/// The full trajectory of the accepted run is returned alongside.
pub fn convergence_run_with_trajectory(
    cfg: &ExperimentConfig,
    n: usize,
    replica: u64,
) -> (ConvergenceRun, Option<Trajectory>) {
    let seed = replica_seed(cfg.master_seed, n, replica);
    match try_convergence_run(cfg, n, replica, seed) {
        Ok((run, traj)) => (run, Some(traj)),
        Err(e) => (ConvergenceRun::broken(n, replica, seed, e), None),
    }
}

pub fn convergence_run(cfg: &ExperimentConfig, n: usize, replica: u64) -> ConvergenceRun {
    convergence_run_with_trajectory(cfg, n, replica).0
}

fn try_convergence_run(
    cfg: &ExperimentConfig,
    n: usize,
    replica: u64,
    seed: u64,
) -> Result<(ConvergenceRun, Trajectory)> {
    let inst = cfg.ensemble.at(n, seed).generate()?;
    let problem = design_problem(cfg, &inst)?;
    let theta0 = alloc::vec![0.0; inst.system.m()];
    let cap = cfg.step_cap(n);
    let thresholds = cfg.thresholds();

    let mut c0 = cfg.c0;
    let mut halvings = 0;
    let (eta, traj) = loop {
        let eta = default_step_size(n, cfg.alpha, cfg.gamma, c0);
        let gd = GdConfig::new(eta, cap)?.with_eps_stop(cfg.eps);
        let traj = run_gd(&problem, &gd, &theta0)?;
        if is_monotone(&traj, MONOTONE_WINDOW) || halvings == MAX_HALVINGS {
            break (eta, traj);
        }
        c0 *= 0.5;
        halvings += 1;
    };

    let res = resonance_summary(&traj);
    let initial_gap = traj.rows.first().map_or(f64::NAN, |r| r.cost_gap);
    let final_gap = traj.final_gap().unwrap_or(f64::NAN);
    let steps_taken = traj.steps_taken();
    let hits: Vec<(f64, Option<usize>)> = thresholds.iter().map(|&e| (e, traj.first_hit(e))).collect();
    let steps_to_eps = traj.first_hit(cfg.eps);
    let mean_contraction = if steps_taken > 0 && initial_gap > 0.0 && final_gap > 0.0 {
        libm::exp(libm::log(final_gap / initial_gap) / steps_taken as f64)
    } else {
        f64::NAN
    };
    let contraction = contraction_fit(&traj, n, steps_to_eps.unwrap_or(steps_taken));
    let x0_inf = traj.rows.first().map_or(f64::NAN, |r| r.x_inf);
    let run = ConvergenceRun {
        n,
        replica,
        seed,
        eta,
        c0,
        halvings,
        status: traj.status,
        steps_taken,
        hits,
        steps_to_eps,
        initial_gap,
        final_gap,
        mean_contraction,
        contraction,
        x0_inf,
        max_x_inf: res.max_x_inf,
        max_a_inf: res.max_a_inf,
        max_theta_inf: res.max_theta_inf,
        inv_max: inverse_max(&inst),
        error: None,
    };
    Ok((run, traj))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSummary {
    pub total: usize,
    pub failed: usize,
    pub capped: usize,
    /// Median steps-to-eps per `n` over converged runs.
    pub median_steps: Vec<(usize, f64)>,
    pub steps_fit: Option<ScalingFit>,
    /// Populated when the fit could not be formed.
    pub fit_error: Option<String>,
}

impl ConvergenceSummary {
    pub fn fail_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.failed as f64 / self.total as f64
        }
    }

    /// More than half of the runs failed.
    pub fn study_failed(&self) -> bool {
        2 * self.failed > self.total
    }
}

/// Sorts runs by `(n, replica)` and fits median steps-to-eps against `n`.
pub fn summarize_convergence(runs: &mut [ConvergenceRun]) -> ConvergenceSummary {
    runs.sort_by_key(|r| (r.n, r.replica));
    let mut median_steps = Vec::new();
    let mut i = 0;
    while i < runs.len() {
        let n = runs[i].n;
        let j = i + runs[i..].iter().take_while(|r| r.n == n).count();
        let steps: Vec<f64> = runs[i..j]
            .iter()
            .filter(|r| !r.failed())
            .filter_map(|r| r.steps_to_eps.map(|s| s as f64))
            .collect();
        if let Some(m) = median(&steps) {
            median_steps.push((n, m));
        }
        i = j;
    }
    let (steps_fit, fit_error) = match fit_scaling("median_steps", &median_steps) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(format!("{e}"))),
    };
    ConvergenceSummary {
        total: runs.len(),
        failed: runs.iter().filter(|r| r.failed()).count(),
        capped: runs.iter().filter(|r| r.capped()).count(),
        median_steps,
        steps_fit,
        fit_error,
    }
}

/// Affine fit of steps against `log(1/eps)` from recorded hitting times.
pub fn log_eps_fit(hits: &[(f64, Option<usize>)]) -> Result<LinearFit> {
    let pts: Vec<(f64, f64)> = hits
        .iter()
        .filter_map(|&(e, s)| s.map(|s| (libm::log(1.0 / e), s as f64)))
        .collect();
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    linear_fit(&xs, &ys)
}

pub fn run_convergence_study(cfg: &ExperimentConfig) -> Result<(Vec<ConvergenceRun>, ConvergenceSummary)> {
    cfg.validate()?;
    let mut runs = Vec::new();
    for &n in &cfg.ns {
        for r in 0..cfg.seeds {
            runs.push(convergence_run(cfg, n, r));
        }
    }
    let summary = summarize_convergence(&mut runs);
    Ok((runs, summary))
}

/// Quantities fitted by the resonance audit.
pub const RESONANCE_QUANTITIES: [&str; 4] = ["max_x_inf", "max_a_inf", "max_theta_inf", "inv_max"];

#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceFit {
    pub fit: ScalingFit,
    /// Exponent above [`RESONANCE_FLAG_EXPONENT`].
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceAudit {
    pub fits: Vec<ResonanceFit>,
    /// Quantities whose fit could not be formed, with the reason.
    pub unfitted: Vec<(String, String)>,
}

fn resonance_value(run: &ConvergenceRun, q: &str) -> f64 {
    match q {
        "max_x_inf" => run.max_x_inf,
        "max_a_inf" => run.max_a_inf,
        "max_theta_inf" => run.max_theta_inf,
        "inv_max" => run.inv_max,
        _ => f64::NAN,
    }
}

/// Fits the trajectory maxima and `||A^{-1}||_max` against `n`, skipping
/// failed runs.
pub fn summarize_resonance(runs: &mut [ConvergenceRun]) -> ResonanceAudit {
    runs.sort_by_key(|r| (r.n, r.replica));
    let mut fits = Vec::new();
    let mut unfitted = Vec::new();
    for q in RESONANCE_QUANTITIES {
        let samples: Vec<(usize, f64)> = runs
            .iter()
            .filter(|r| !r.failed())
            .map(|r| (r.n, resonance_value(r, q)))
            .collect();
        match fit_scaling(q, &samples) {
            Ok(fit) => fits.push(ResonanceFit {
                flagged: fit.slope > RESONANCE_FLAG_EXPONENT,
                fit,
            }),
            Err(e) => unfitted.push((q.into(), format!("{e}"))),
        }
    }
    ResonanceAudit { fits, unfitted }
}

pub fn run_resonance_audit(cfg: &ExperimentConfig) -> Result<(Vec<ConvergenceRun>, ResonanceAudit)> {
    let (mut runs, _) = run_convergence_study(cfg)?;
    let audit = summarize_resonance(&mut runs);
    Ok((runs, audit))
}

/// `||x||_inf` at `theta = 0`.
pub fn initial_state_inf(inst: &ProblemInstance) -> Result<f64> {
    let x0 = inst.system.forward_solve(&alloc::vec![0.0; inst.system.m()])?;
    Ok(norm_inf(&x0))
}
