//! Gradient descent on a design problem with adjoint gradients.
//!
//! [`run_gd`] performs exactly `max_steps` updates
//! `theta_t = theta_{t-1} - eta * g_{t-1}` (or fewer when the cost gap drops
//! below `eps_stop`), recording state/adjoint sup-norms at every visited
//! design. A design outside the domain ends the run with
//! [`Status::Failed`]; nothing is recorded for it.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, hadamard, norm2, norm2_sq, norm_inf};
use crate::system::{DesignProblem, GradientEval};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdConfig {
    pub eta: f64,
    pub max_steps: usize,
    /// Stop once `f - f* <= eps_stop`; `0` disables early stopping.
    pub eps_stop: f64,
    pub record_certificate: bool,
}

impl GdConfig {
    pub fn new(eta: f64, max_steps: usize) -> Result<Self> {
        let cfg = Self {
            eta,
            max_steps,
            eps_stop: 0.0,
            record_certificate: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_eps_stop(mut self, eps: f64) -> Self {
        self.eps_stop = eps;
        self
    }

    pub fn with_certificate(mut self, on: bool) -> Self {
        self.record_certificate = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "step size must be finite and positive, got {}",
                self.eta
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        if !(self.eps_stop >= 0.0) {
            return Err(Error::InvalidConfig("eps_stop must be >= 0".into()));
        }
        Ok(())
    }
}

/// Step size `c0 * n^(alpha - 3 gamma - 1)`.
pub fn default_step_size(n: usize, alpha: f64, gamma: f64, c0: f64) -> f64 {
    c0 * libm::pow(n as f64, alpha - 3.0 * gamma - 1.0)
}

/// Per-step lower-bound terms on the decrease of one gradient step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    /// `||B^T v||^2` with `v = x ⊙ a`
    pub bv_normsq: f64,
    pub eps1: f64,
    pub eps2: f64,
    /// `eta f'^2 (||B^T v||^2 + eps1 + eta eps2)`
    pub predicted_decrease: f64,
}

impl Certificate {
    /// Whether an observed decrease respects the certificate up to rounding.
    pub fn holds(&self, actual_decrease: f64, cost: f64) -> bool {
        actual_decrease >= self.predicted_decrease - 1e-9 * (1.0 + cost.abs())
    }
}

fn certificate_from(
    problem: &DesignProblem,
    here: &GradientEval,
    x_next: &[f64],
    eta: f64,
) -> Certificate {
    let sys = problem.system();
    let x = &here.states.x;
    let a = &here.states.a;
    let v = hadamard(x, a);
    let btv = sys.select_transpose(&v);
    let bbtv = sys.select(&btv);
    let bv_normsq = norm2_sq(&btv);
    let weighted: Vec<f64> = a.iter().zip(&bbtv).map(|(ai, wi)| ai * wi).collect();
    let eps1 = weighted
        .iter()
        .zip(x_next.iter().zip(x))
        .map(|(w, (xn, xo))| w * (xn - xo))
        .sum::<f64>();
    let inner = dot(&weighted, x_next);
    let eps2 = -0.5 * problem.cost().smoothness() * inner * inner;
    let predicted_decrease = eta * here.slope * here.slope * (bv_normsq + eps1 + eta * eps2);
    Certificate {
        bv_normsq,
        eps1,
        eps2,
        predicted_decrease,
    }
}

/// Descent certificate for the move `theta -> theta_next`.
pub fn descent_certificate(
    problem: &DesignProblem,
    theta: &[f64],
    theta_next: &[f64],
    eta: f64,
) -> Result<Certificate> {
    let here = problem.cost_gradient(theta)?;
    let x_next = problem.system().forward_solve(theta_next)?;
    Ok(certificate_from(problem, &here, &x_next, eta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxSteps,
    /// The design reached after `step` updates left the domain
    /// (`step == 0` means the initial design).
    Failed { step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub cost: f64,
    pub cost_gap: f64,
    pub grad_norm: f64,
    pub x_inf: f64,
    pub a_inf: f64,
    pub theta_inf: f64,
    /// Certificate for the update leaving this design, when recorded.
    pub certificate: Option<Certificate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<StepRecord>,
    /// Full designs, kept every `theta_stride` steps and at the last design.
    pub thetas: Vec<(usize, Vec<f64>)>,
    pub theta_stride: usize,
    pub status: Status,
    /// Last in-domain design, `None` when the initial design failed.
    pub final_theta: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn steps_taken(&self) -> usize {
        self.rows.last().map_or(0, |r| r.step)
    }

    pub fn final_gap(&self) -> Option<f64> {
        self.rows.last().map(|r| r.cost_gap)
    }

    /// First step at which the gap is `<= eps`.
    pub fn first_hit(&self, eps: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.cost_gap <= eps).map(|r| r.step)
    }
}

/// Runs gradient descent from `theta0`.
pub fn run_gd(problem: &DesignProblem, cfg: &GdConfig, theta0: &[f64]) -> Result<Trajectory> {
    cfg.validate()?;
    let sys = problem.system();
    let fmin = 0.0;
    let theta_stride = cfg.max_steps.div_ceil(100).max(1);
    let mut rows = Vec::new();
    let mut thetas = Vec::new();

    let mut theta = theta0.to_vec();
    let k0 = sys.assemble(&theta)?;
    if !k0.in_domain() {
        return Ok(Trajectory {
            rows,
            thetas,
            theta_stride,
            status: Status::Failed { step: 0 },
            final_theta: None,
        });
    }
    let mut here = problem.gradient_from(&k0)?;
    let mut t = 0usize;

    let status = loop {
        let gap = here.cost - fmin;
        rows.push(StepRecord {
            step: t,
            cost: here.cost,
            cost_gap: gap,
            grad_norm: norm2(&here.gradient),
            x_inf: here.x_inf(),
            a_inf: here.a_inf(),
            theta_inf: norm_inf(&theta),
            certificate: None,
        });
        if t.is_multiple_of(theta_stride) {
            thetas.push((t, theta.clone()));
        }
        if cfg.eps_stop > 0.0 && gap <= cfg.eps_stop {
            break Status::Converged;
        }
        if t == cfg.max_steps {
            break Status::MaxSteps;
        }

        let next: Vec<f64> = theta
            .iter()
            .zip(&here.gradient)
            .map(|(th, g)| th - cfg.eta * g)
            .collect();
        let k = match sys.assemble(&next) {
            Ok(k) if k.in_domain() => k,
            Ok(_) => break Status::Failed { step: t + 1 },
            Err(Error::NonFinite(_)) => break Status::Failed { step: t + 1 },
            Err(e) => return Err(e),
        };
        let there = problem.gradient_from(&k)?;
        if cfg.record_certificate {
            let cert = certificate_from(problem, &here, &there.states.x, cfg.eta);
            if let Some(last) = rows.last_mut() {
                last.certificate = Some(cert);
            }
        }
        theta = next;
        here = there;
        t += 1;
    };

    if thetas.last().map(|(s, _)| *s) != Some(t) {
        thetas.push((t, theta.clone()));
    }
    Ok(Trajectory {
        rows,
        thetas,
        theta_stride,
        status,
        final_theta: Some(theta),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonanceSummary {
    pub max_x_inf: f64,
    pub max_a_inf: f64,
    pub max_theta_inf: f64,
    /// Set when the trajectory had no recorded designs; the maxima are then 0.
    pub empty: bool,
}

pub fn resonance_summary(traj: &Trajectory) -> ResonanceSummary {
    let fold = |f: fn(&StepRecord) -> f64| traj.rows.iter().map(f).fold(0.0, f64::max);
    ResonanceSummary {
        max_x_inf: fold(|r| r.x_inf),
        max_a_inf: fold(|r| r.a_inf),
        max_theta_inf: fold(|r| r.theta_inf),
        empty: traj.rows.is_empty(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostSpec;
    use crate::linalg::Matrix;
    use crate::system::{PhysicalSystem, Selection};
    use alloc::vec;

    fn scalar_problem(a: f64, cost: CostSpec) -> DesignProblem {
        let sys =
            PhysicalSystem::new(Matrix::from_diag(&[a]), Selection::Identity, vec![1.0]).unwrap();
        DesignProblem::new(sys, vec![1.0], cost).unwrap()
    }

    #[test]
    fn step_size_examples() {
        assert!((default_step_size(100, 0.5, 0.5, 1.0) - 1e-4).abs() < 1e-18);
        assert_eq!(default_step_size(1, 0.3, 0.9, 0.3), 0.3);
        assert!((default_step_size(16, 0.5, 0.5, 2.0) - 7.8125e-3).abs() < 1e-17);
    }

    #[test]
    fn scalar_problem_converges_to_closed_form_optimum() {
        // x = 1/(2 + theta) = 0.4 at theta = 0.5
        let p = scalar_problem(2.0, CostSpec::quadratic(0.4, 1.0).unwrap());
        let cfg = GdConfig::new(0.5, 20_000).unwrap().with_eps_stop(1e-10);
        let traj = run_gd(&p, &cfg, &[0.0]).unwrap();
        assert_eq!(traj.status, Status::Converged);
        assert!(traj.final_gap().unwrap() <= 1e-10);
        let theta = traj.final_theta.as_ref().unwrap()[0];
        assert!((theta - 0.5).abs() < 1e-4, "theta = {theta}");

        // Hand-iterated recursion theta <- theta + eta (x - t) x^2, x = 1/(2 + theta).
        let mut th = 0.0f64;
        for _ in 0..traj.steps_taken() {
            let x = 1.0 / (2.0 + th);
            th += 0.5 * (x - 0.4) * x * x;
        }
        assert!((th - theta).abs() < 1e-12);
    }

    #[test]
    fn starting_at_optimum_stays_put() {
        let p = scalar_problem(2.0, CostSpec::new(0.5, 1.0, 2.0).unwrap());
        let cfg = GdConfig::new(0.3, 25).unwrap();
        let traj = run_gd(&p, &cfg, &[0.0]).unwrap();
        assert_eq!(traj.status, Status::MaxSteps);
        assert_eq!(traj.rows.len(), 26);
        assert!(traj.rows.iter().all(|r| r.cost_gap == 0.0 && r.theta_inf == 0.0));
    }

    #[test]
    fn crossing_the_singularity_fails() {
        // K = 1 + theta and t = 3: g0 = -(1 - 3) * 1 * 1 = 2, so eta = 0.5 lands
        // exactly on the singular point theta = -1.
        let p = scalar_problem(1.0, CostSpec::quadratic(3.0, 1.0).unwrap());
        let cfg = GdConfig::new(0.5, 10).unwrap();
        let traj = run_gd(&p, &cfg, &[0.0]).unwrap();
        assert_eq!(traj.status, Status::Failed { step: 1 });
        assert_eq!(traj.rows.len(), 1);
        assert_eq!(traj.final_theta, Some(vec![0.0]));
    }

    #[test]
    fn initial_design_outside_domain() {
        let p = scalar_problem(1.0, CostSpec::quadratic(0.0, 1.0).unwrap());
        let traj = run_gd(&p, &GdConfig::new(0.1, 5).unwrap(), &[-1.0]).unwrap();
        assert_eq!(traj.status, Status::Failed { step: 0 });
        assert!(traj.rows.is_empty());
        let s = resonance_summary(&traj);
        assert!(s.empty);
        assert_eq!((s.max_x_inf, s.max_a_inf, s.max_theta_inf), (0.0, 0.0, 0.0));
    }

    #[test]
    fn certificate_identity_move_and_sign() {
        let p = scalar_problem(2.0, CostSpec::new(0.1, 1.0, 3.0).unwrap());
        let c = descent_certificate(&p, &[0.2], &[0.2], 0.1).unwrap();
        assert_eq!(c.eps1, 0.0);
        assert!(c.eps2 <= 0.0);
    }

    #[test]
    fn certificate_bounds_one_step_on_scalar_problem() {
        let p = scalar_problem(2.0, CostSpec::new(0.4, 1.0, 2.0).unwrap());
        let eta = 0.5;
        let g = p.cost_gradient(&[0.0]).unwrap();
        let next = [0.0 - eta * g.gradient[0]];
        let cert = descent_certificate(&p, &[0.0], &next, eta).unwrap();
        // Independent evaluation of both sides.
        let f0 = p.cost().value(1.0 / 2.0);
        let f1 = p.cost().value(1.0 / (2.0 + next[0]));
        assert!(cert.holds(f0 - f1, f0));
        assert!(cert.predicted_decrease > 0.0);
    }

    #[test]
    fn recorded_certificates_hold() {
        let p = scalar_problem(2.0, CostSpec::new(0.4, 1.0, 2.0).unwrap());
        let cfg = GdConfig::new(0.5, 200).unwrap().with_certificate(true);
        let traj = run_gd(&p, &cfg, &[0.0]).unwrap();
        for w in traj.rows.windows(2) {
            let cert = w[0].certificate.expect("certificate recorded");
            assert!(cert.holds(w[0].cost - w[1].cost, w[0].cost));
        }
        assert!(traj.rows.last().unwrap().certificate.is_none());
    }

    #[test]
    fn one_step_summary() {
        let sys = PhysicalSystem::new(Matrix::identity(2), Selection::Identity, vec![1.0, 0.0])
            .unwrap();
        let p = DesignProblem::new(sys, vec![1.0, 0.0], CostSpec::quadratic(1.0, 1.0).unwrap())
            .unwrap();
        let traj = run_gd(&p, &GdConfig::new(0.1, 1).unwrap(), &[0.0, 0.0]).unwrap();
        let s = resonance_summary(&traj);
        assert_eq!(s.max_x_inf, 1.0);
        assert!(!s.empty);
    }

    #[test]
    fn thinning_keeps_final_design() {
        let p = scalar_problem(2.0, CostSpec::quadratic(0.4, 1.0).unwrap());
        let traj = run_gd(&p, &GdConfig::new(0.1, 250).unwrap(), &[0.0]).unwrap();
        assert_eq!(traj.theta_stride, 3);
        assert_eq!(traj.thetas.first().unwrap().0, 0);
        assert_eq!(traj.thetas.last().unwrap().0, 250);
        assert_eq!(traj.rows.len(), 251);
    }

    #[test]
    fn config_validation() {
        assert!(GdConfig::new(0.0, 1).is_err());
        assert!(GdConfig::new(f64::INFINITY, 1).is_err());
        assert!(GdConfig::new(0.1, 0).is_err());
    }
}
