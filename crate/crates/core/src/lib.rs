//! Stein's method on Riemannian manifolds through the weighted Laplacian
//! `L_P f = Δf - g(∇φ, ∇f)` of a target density `e^{-φ}`.
//!
//! - [`geometry`]: circle, sphere, hyperboloid, flat torus and Euclidean
//!   models with exp/log maps, frames, distance Hessians and geodesic balls.
//! - [`measures`]: target density families and their potentials.
//! - [`quadrature`]: tensor quadrature grids for normalizing constants and
//!   integral identities.
//! - [`operator`]: the Stein operator on test functions and its integral
//!   identities.
//! - [`ksd`]: Stein kernels, KSD estimators and the wild-bootstrap test.
//! - [`spectral`]: flux-form discretizations, kernels, spectral gaps and
//!   Stein-equation solves.
//! - [`sampling`]: geodesic random-walk Metropolis-Hastings and diagnostics.

// `!(x > 0.0)` is deliberate: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod ksd;
pub mod measures;
pub mod operator;
pub mod quadrature;
pub mod sampling;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};
