//! Convex relaxations of bioprocess network optimization.
//!
//! A bioprocess is a network of well-mixed tanks connected by flow and
//! diffusion, with microbial reactions in each tank. Optimizing such a
//! network over a trajectory is nonconvex because of the growth kinetics
//! `T = φ(ξ)`. Relaxing the kinetics to `T ≤ φ(ξ)` gives a second-order cone
//! program whenever the growth rates are Contois or constant-biomass Monod
//! (and geometric/min combinations of those). This crate
//!
//! * assembles the relaxed transient and steady-state programs
//!   ([`program`]),
//! * solves them with a sparse primal-dual interior-point method
//!   ([`solver`]),
//! * and checks whether the relaxation was exact, both a posteriori and via
//!   dual-multiplier certificates ([`exactness`]).
//!
//! The forward simulator in [`simulate`] integrates the unrelaxed dynamics
//! with the same implicit Euler step and is used to cross-validate exact
//! solutions.

#![allow(clippy::needless_range_loop)]

pub mod conic;
pub mod discretize;
pub mod error;
pub mod exactness;
pub mod kinetics;
pub mod pipeline;
pub mod network;
pub mod program;
pub mod scenario;
pub mod simulate;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result, ValidationErrors};
pub use scenario::Scenario;
