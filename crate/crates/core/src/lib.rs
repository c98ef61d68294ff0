//! Solvers and verification tooling for the distributed optimal control of a
//! nonlocal viscous phase-field system.
//!
//! The crate provides, on desk-scale uniform meshes:
//!
//! - forward solves of the coupled state system mapping a microenergy source
//!   `u` to an order parameter / chemical potential pair `(rho, mu)`,
//! - the linearized (sensitivity) system and Taylor-remainder verification of
//!   directional differentiability,
//! - backward adjoint solves and the tracking-cost gradient `p + beta3 u`,
//! - exact projection onto the admissible set (pointwise box intersected
//!   with an H1-in-time ball) and projected-gradient descent,
//! - a harness that turns the structural claims (uniform bounds, stability,
//!   duality, first-order optimality) into seeded, reportable checks.

pub mod adjoint;
pub mod error;
pub mod field;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod nonlocal;
pub mod optimizer;
pub mod physics;
pub mod sensitivity;
pub mod state;

pub use error::{Error, Result};
pub use field::{inner_step_pairing, ScalarField, SpaceTimeField, TimeGrid};
pub use grid::{Grid, GridSpec};
pub use nonlocal::{KernelSpec, NonlocalCoupling, NonlocalOperator, RadialKernel, TimeProfile};
pub use physics::{CouplingKind, PotentialSpec};
