//! Bi-affine physical systems and the adjoint-method gradient.
//!
//! A physical system maps design parameters `theta` to the state
//! `x = (A + diag(B theta))^{-1} b`; the adjoint system maps `(theta, c)` to
//! `a = (A + diag(B theta))^{-T} c`. For a cost `f(c^T x)` the gradient is
//! `-f'(c^T x) B^T (x ⊙ a)`, which costs one factorization and two
//! triangular solve pairs regardless of the number of parameters.

use alloc::vec::Vec;

use crate::cost::CostSpec;
use crate::error::{Error, Result};
use crate::linalg::{dot, hadamard, norm_inf, Lu, Matrix};

/// Parameters whose system matrix has a reciprocal condition estimate at or
/// below this value are treated as outside the domain.
pub const DEFAULT_DOMAIN_TOLERANCE: f64 = 1e-12;

/// The selection matrix `B`.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    /// `B = I_n`; then `m == n` and no multiply is performed.
    Identity,
    Dense(Matrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalSystem {
    a: Matrix,
    selection: Selection,
    b: Vec<f64>,
    m: usize,
    domain_tolerance: f64,
}

impl PhysicalSystem {
    pub fn new(a: Matrix, selection: Selection, b: Vec<f64>) -> Result<Self> {
        let n = a.rows();
        if n == 0 {
            return Err(Error::DimensionMismatch {
                what: "state size",
                expected: 1,
                got: 0,
            });
        }
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                what: "physics matrix columns",
                expected: n,
                got: a.cols(),
            });
        }
        let m = match &selection {
            Selection::Identity => n,
            Selection::Dense(bm) => {
                if bm.rows() != n {
                    return Err(Error::DimensionMismatch {
                        what: "selection matrix rows",
                        expected: n,
                        got: bm.rows(),
                    });
                }
                if bm.cols() == 0 {
                    return Err(Error::DimensionMismatch {
                        what: "parameter size",
                        expected: 1,
                        got: 0,
                    });
                }
                if !bm.is_finite() {
                    return Err(Error::NonFinite("selection matrix"));
                }
                bm.cols()
            }
        };
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                what: "source vector",
                expected: n,
                got: b.len(),
            });
        }
        if !a.is_finite() {
            return Err(Error::NonFinite("physics matrix"));
        }
        if !b.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("source vector"));
        }
        Ok(Self {
            a,
            selection,
            b,
            m,
            domain_tolerance: DEFAULT_DOMAIN_TOLERANCE,
        })
    }

    pub fn with_domain_tolerance(mut self, tol: f64) -> Self {
        self.domain_tolerance = tol;
        self
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn physics(&self) -> &Matrix {
        &self.a
    }

    pub fn selection(&self) -> &Selection {
        &self.selection
    }

    pub fn source(&self) -> &[f64] {
        &self.b
    }

    pub fn domain_tolerance(&self) -> f64 {
        self.domain_tolerance
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.m {
            return Err(Error::DimensionMismatch {
                what: "theta",
                expected: self.m,
                got: theta.len(),
            });
        }
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("theta"));
        }
        Ok(())
    }

    /// `B theta`
    pub fn select(&self, theta: &[f64]) -> Vec<f64> {
        match &self.selection {
            Selection::Identity => theta.to_vec(),
            Selection::Dense(bm) => bm.mul_vec(theta),
        }
    }

    /// `B^T v`
    pub fn select_transpose(&self, v: &[f64]) -> Vec<f64> {
        match &self.selection {
            Selection::Identity => v.to_vec(),
            Selection::Dense(bm) => bm.tr_mul_vec(v),
        }
    }

    /// Builds and factors `K = A + diag(B theta)`.
    pub fn assemble(&self, theta: &[f64]) -> Result<SystemMatrix> {
        self.check_theta(theta)?;
        let mut k = self.a.clone();
        for (i, d) in self.select(theta).into_iter().enumerate() {
            let v = k.get(i, i) + d;
            k.set(i, i, v);
        }
        let lu = Lu::factor(k.clone());
        let rcond = lu.rcond();
        Ok(SystemMatrix {
            k,
            lu,
            rcond,
            tolerance: self.domain_tolerance,
        })
    }

    /// Whether `theta` lies in the domain, plus the condition estimate.
    ///
    /// Dimension errors are the only failure mode.
    pub fn domain_check(&self, theta: &[f64]) -> Result<DomainStatus> {
        let k = self.assemble(theta)?;
        Ok(DomainStatus {
            in_domain: k.in_domain(),
            rcond: k.rcond(),
        })
    }

    /// `x = phi(theta)`
    pub fn forward_solve(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.assemble(theta)?.solve_state(&self.b)
    }

    /// `a = ad[phi](theta, c)`
    pub fn adjoint_solve(&self, theta: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        if c.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "overlap vector",
                expected: self.n(),
                got: c.len(),
            });
        }
        self.assemble(theta)?.solve_adjoint(c)
    }

    /// State and adjoint from one shared factorization.
    pub fn solve_states(&self, theta: &[f64], c: &[f64]) -> Result<StateVectors> {
        if c.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "overlap vector",
                expected: self.n(),
                got: c.len(),
            });
        }
        let k = self.assemble(theta)?;
        k.states(&self.b, c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainStatus {
    pub in_domain: bool,
    pub rcond: f64,
}

/// `K = A + diag(B theta)` together with its LU factorization.
#[derive(Debug, Clone)]
pub struct SystemMatrix {
    k: Matrix,
    lu: Lu,
    rcond: f64,
    tolerance: f64,
}

impl SystemMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.k
    }

    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    pub fn in_domain(&self) -> bool {
        self.rcond > self.tolerance
    }

    fn require_domain(&self) -> Result<()> {
        if self.in_domain() {
            Ok(())
        } else {
            Err(Error::NotInDomain { rcond: self.rcond })
        }
    }

    pub fn solve_state(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.require_domain()?;
        Ok(self.lu.solve(b))
    }

    pub fn solve_adjoint(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.require_domain()?;
        Ok(self.lu.solve_transpose(c))
    }

    pub fn states(&self, b: &[f64], c: &[f64]) -> Result<StateVectors> {
        let x = self.solve_state(b)?;
        let a = self.solve_adjoint(c)?;
        let overlap = dot(c, &x);
        Ok(StateVectors { x, a, overlap })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVectors {
    /// `phi(theta)`
    pub x: Vec<f64>,
    /// `ad[phi](theta, c)`
    pub a: Vec<f64>,
    /// `c^T x`
    pub overlap: f64,
}

/// A physical system, an overlap vector and a cost on the overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignProblem {
    system: PhysicalSystem,
    c: Vec<f64>,
    cost: CostSpec,
}

impl DesignProblem {
    pub fn new(system: PhysicalSystem, c: Vec<f64>, cost: CostSpec) -> Result<Self> {
        if c.len() != system.n() {
            return Err(Error::DimensionMismatch {
                what: "overlap vector",
                expected: system.n(),
                got: c.len(),
            });
        }
        if !c.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("overlap vector"));
        }
        Ok(Self { system, c, cost })
    }

    pub fn system(&self) -> &PhysicalSystem {
        &self.system
    }

    pub fn overlap_vector(&self) -> &[f64] {
        &self.c
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn with_cost(mut self, cost: CostSpec) -> Self {
        self.cost = cost;
        self
    }

    /// `f(c^T phi(theta))`
    pub fn cost_at(&self, theta: &[f64]) -> Result<f64> {
        let x = self.system.forward_solve(theta)?;
        Ok(self.cost.value(dot(&self.c, &x)))
    }

    /// Adjoint-method gradient of `theta -> f(c^T phi(theta))`.
    pub fn cost_gradient(&self, theta: &[f64]) -> Result<GradientEval> {
        let k = self.system.assemble(theta)?;
        self.gradient_from(&k)
    }

    pub(crate) fn gradient_from(&self, k: &SystemMatrix) -> Result<GradientEval> {
        let states = k.states(self.system.source(), &self.c)?;
        let e = self.cost.eval(states.overlap);
        let v = hadamard(&states.x, &states.a);
        let mut gradient = self.system.select_transpose(&v);
        gradient.iter_mut().for_each(|g| *g *= -e.slope);
        Ok(GradientEval {
            gradient,
            cost: e.value,
            slope: e.slope,
            rcond: k.rcond(),
            states,
        })
    }

    /// Central differences of the cost, `(f(theta + h e_j) - f(theta - h e_j)) / 2h`.
    pub fn finite_difference_gradient(&self, theta: &[f64], h: f64) -> Result<Vec<f64>> {
        let mut probe = theta.to_vec();
        let mut out = Vec::with_capacity(theta.len());
        for j in 0..theta.len() {
            probe[j] = theta[j] + h;
            let up = self.cost_at(&probe)?;
            probe[j] = theta[j] - h;
            let down = self.cost_at(&probe)?;
            probe[j] = theta[j];
            out.push((up - down) / (2.0 * h));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEval {
    pub gradient: Vec<f64>,
    pub cost: f64,
    /// `f'(c^T x)`
    pub slope: f64,
    pub rcond: f64,
    pub states: StateVectors,
}

impl GradientEval {
    pub fn x_inf(&self) -> f64 {
        norm_inf(&self.states.x)
    }

    pub fn a_inf(&self) -> f64 {
        norm_inf(&self.states.a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm2;
    use alloc::vec;

    fn scalar(a: f64) -> PhysicalSystem {
        PhysicalSystem::new(Matrix::from_diag(&[a]), Selection::Identity, vec![1.0]).unwrap()
    }

    #[test]
    fn identity_assembly() {
        let sys = PhysicalSystem::new(Matrix::identity(2), Selection::Identity, vec![1.0, 0.0])
            .unwrap();
        let k = sys.assemble(&[0.0, 0.0]).unwrap();
        assert_eq!(k.matrix(), &Matrix::identity(2));
        assert_eq!(k.rcond(), 1.0);
    }

    #[test]
    fn exact_singularity_is_outside_domain() {
        let sys = scalar(1.0);
        let k = sys.assemble(&[-1.0]).unwrap();
        assert_eq!(k.matrix().get(0, 0), 0.0);
        assert_eq!(k.rcond(), 0.0);
        let st = sys.domain_check(&[-1.0]).unwrap();
        assert!(!st.in_domain);
        assert!(matches!(sys.forward_solve(&[-1.0]), Err(Error::NotInDomain { .. })));
    }

    #[test]
    fn near_singular_diagonal_rejected() {
        let sys = PhysicalSystem::new(
            Matrix::from_diag(&[1.0, 1e-13]),
            Selection::Identity,
            vec![1.0, 1.0],
        )
        .unwrap();
        let st = sys.domain_check(&[0.0, 0.0]).unwrap();
        assert!(!st.in_domain);
        assert!((st.rcond - 1e-13).abs() < 1e-20);
    }

    #[test]
    fn theta_length_checked() {
        let sys = scalar(2.0);
        assert!(matches!(
            sys.assemble(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn forward_examples() {
        let sys = PhysicalSystem::new(Matrix::identity(2), Selection::Identity, vec![1.0, 0.0])
            .unwrap();
        assert_eq!(sys.forward_solve(&[0.0, 0.0]).unwrap(), vec![1.0, 0.0]);

        let mut two = Matrix::identity(2);
        two.set(0, 0, 2.0);
        two.set(1, 1, 2.0);
        let sys = PhysicalSystem::new(two, Selection::Identity, vec![1.0, 1.0]).unwrap();
        assert_eq!(sys.forward_solve(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);

        let x = scalar(2.0).forward_solve(&[1.0]).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn adjoint_examples() {
        let sys = PhysicalSystem::new(Matrix::identity(2), Selection::Identity, vec![1.0, 0.0])
            .unwrap();
        assert_eq!(sys.adjoint_solve(&[0.0, 0.0], &[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);

        let upper = Matrix::from_row_major(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        let sys = PhysicalSystem::new(upper, Selection::Identity, vec![1.0, 0.0]).unwrap();
        let a = sys.adjoint_solve(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-15 && (a[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_gradient_matches_analytic() {
        // f = x^2/2, x = 1/(2 + theta): df/dtheta = -(2 + theta)^{-3} = -1/8 at 0.
        let p = DesignProblem::new(scalar(2.0), vec![1.0], CostSpec::quadratic(0.0, 1.0).unwrap())
            .unwrap();
        let g = p.cost_gradient(&[0.0]).unwrap();
        assert!((g.gradient[0] + 0.125).abs() < 1e-15);
        assert!((g.cost - 0.125).abs() < 1e-15);
        let fd = p.finite_difference_gradient(&[0.0], 1e-4).unwrap();
        assert!((fd[0] + 0.125).abs() < 1e-8);
    }

    #[test]
    fn finite_difference_error_is_second_order() {
        let p = DesignProblem::new(scalar(2.0), vec![1.0], CostSpec::new(0.1, 1.0, 3.0).unwrap())
            .unwrap();
        let exact = p.cost_gradient(&[0.3]).unwrap().gradient[0];
        let e1 = (p.finite_difference_gradient(&[0.3], 1e-2).unwrap()[0] - exact).abs();
        let e2 = (p.finite_difference_gradient(&[0.3], 5e-3).unwrap()[0] - exact).abs();
        let ratio = e1 / e2;
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn stationary_cost_has_zero_gradient() {
        let sys = scalar(2.0);
        let t = sys.forward_solve(&[0.0]).unwrap()[0];
        let p = DesignProblem::new(sys, vec![1.0], CostSpec::new(t, 1.0, 2.0).unwrap()).unwrap();
        let g = p.cost_gradient(&[0.0]).unwrap();
        assert_eq!(g.gradient, vec![0.0]);
        let fd = p.finite_difference_gradient(&[0.0], 1e-5).unwrap();
        assert!(norm2(&fd) < 1e-10);
    }

    #[test]
    fn dense_selection_dimensions() {
        let bm = Matrix::from_row_major(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let sys = PhysicalSystem::new(Matrix::identity(3), Selection::Dense(bm), vec![1.0; 3])
            .unwrap();
        assert_eq!(sys.m(), 2);
        let k = sys.assemble(&[0.5, 0.25]).unwrap();
        assert_eq!(k.matrix().diag(), vec![1.5, 1.25, 1.75]);
        assert!(sys.assemble(&[0.5]).is_err());
        assert!(PhysicalSystem::new(
            Matrix::identity(2),
            Selection::Dense(Matrix::zeros(3, 1)),
            vec![0.0; 2]
        )
        .is_err());
    }
}
