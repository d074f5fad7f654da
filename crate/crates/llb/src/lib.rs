//! Spectral Galerkin solver for the stochastic Landau-Lifshitz-Bloch equation
//! on 1-d and 2-d boxes with Neumann boundary conditions.
//!
//! The crate is organised as a stack:
//!
//! * [`spectral`] — cosine eigenbasis, transforms, projections, Sobolev norms;
//! * [`model`] — the LLB drift and noise operators in Galerkin form;
//! * [`wiener`] — reproducible Wiener increments with midpoint refinement;
//! * [`integrator`] — Euler-Maruyama, stochastic Heun and IMEX time stepping;
//! * [`diagnostics`] — discrete energy balances, moment estimates, temporal
//!   structure functions;
//! * [`experiments`] — multi-path studies (perturbation growth, Galerkin
//!   convergence, long-horizon occupation statistics);
//! * [`config`] / [`cli`] — batch front-end.

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod integrator;
pub mod model;
pub mod spectral;
pub mod wiener;

pub use error::{Error, Result};
