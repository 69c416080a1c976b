//! Interior penalty discontinuous Galerkin solver for the coupled
//! Cahn-Hilliard / Navier-Stokes system on 2D triangular meshes.
//!
//! The time discretization is implicit Euler with a convex-concave split of
//! the chemical energy density and lagged transport coefficients, which
//! conserves mass exactly and dissipates the discrete energy for any step
//! size. The crate provides the meshes and broken polynomial spaces, the DG
//! form assembly, the coupled nonlinear stepper, diagnostic probes for the
//! analysis constants, and a manufactured-solution convergence harness.

pub mod basis;
pub mod diagnostics;
pub mod forms;
pub mod initial;
pub mod linalg;
pub mod mesh;
pub mod mms;
pub mod parallel;
pub mod potential;
pub mod projections;
pub mod quadrature;
pub mod space;
pub mod stepper;

pub use mesh::Mesh;
pub use potential::Potential;
pub use stepper::{SchemeParams, Stepper, TimeStepState};
