//! Bi-affine physical design problems.
//!
//! A design problem minimizes `f(c^T x)` over parameters `theta`, where the
//! state solves `(A + diag(B theta)) x = b`. This crate provides
//!
//! * dense linear algebra with condition estimation ([`linalg`]),
//! * strongly convex scalar costs ([`cost`]),
//! * the physical and adjoint systems with exact gradients ([`system`]),
//! * gradient descent with per-step descent certificates ([`gd`]),
//! * Gaussian and Haar-SVD random problem families ([`ensembles`]),
//! * finite-size condition measurements and scaling fits ([`conditions`]),
//! * orthogonal Weingarten calculus and Monte Carlo moment oracles
//!   ([`weingarten`]),
//! * convergence and resonance studies ([`experiment`]).
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;

pub mod conditions;
pub mod cost;
pub mod ensembles;
pub mod error;
pub mod experiment;
pub mod gd;
pub mod linalg;
pub mod stats;
pub mod system;
pub mod weingarten;

pub use cost::CostSpec;
pub use ensembles::{EnsembleKind, EnsembleSpec, InverseHandle, ProblemInstance};
pub use error::{Error, Result};
pub use gd::{run_gd, GdConfig, Status, Trajectory};
pub use linalg::Matrix;
pub use system::{DesignProblem, PhysicalSystem, Selection};
