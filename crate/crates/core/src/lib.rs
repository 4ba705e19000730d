//! Numerical laboratory for the porous medium equation with drift,
//! `∂ₜρ = Δρ^m − ∇·(Vρ)` on boxes with no-flux boundaries.
//!
//! The crate provides the constructive splitting scheme (homogeneous PME
//! steps alternating with flow push-forwards), a monolithic reference solver,
//! Wasserstein distances, the exponent algebra of the scaling-invariant drift
//! classes, numerical audits of the a priori estimates, and a consumption-type
//! Keller-Segel simulator.

mod banded;
mod multigrid;
pub mod audit;
pub mod config;
pub mod error;
pub mod flow;
pub mod grid;
pub mod ks;
pub mod measures;
pub mod pme;
pub mod runner;
pub mod serrin;
pub mod splitting;
pub mod trajectory;

pub use error::{Error, Result};
