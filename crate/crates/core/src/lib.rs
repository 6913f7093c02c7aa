//! Momentum-conserving simulation of deformable shells and solids.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`]: topology, mass lumping, procedural sheets and cuboids, file I/O.
//! - [`elastic`]: StVK membranes, Neo-Hookean tetrahedra and discrete-shell bending.
//! - [`impulse_basis`]: edge-length and dihedral-angle stencils whose impulses
//!   carry zero net force and zero net torque.
//! - [`integrator`]: external forces, the momentum step and a Newton-based
//!   implicit Euler reference solver.
//! - [`velocity_projection`]: momentum diagnostics and the 6x6 KKT velocity correction.
//! - [`neural`]: a small reverse-mode tensor engine, MLP blocks, Adam and checkpoints.
//! - [`momentum_gnn`]: the per-edge impulse network and a per-vertex baseline.
//! - [`harness`]: data generation, noise, self-supervised training, rollouts,
//!   diagnostics and verification suites.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod elastic;
pub mod error;
pub mod harness;
pub mod impulse_basis;
pub mod integrator;
pub mod mesh;
pub mod momentum_gnn;
pub mod neural;
pub mod velocity_projection;

pub use error::{Error, Result};

/// Positions, velocities, forces and impulses all live in this type.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3x3 matrices (deformation gradients, affine maps).
pub type Mat3 = nalgebra::Matrix3<f64>;
