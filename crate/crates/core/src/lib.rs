//! Truncated stochastic approximation with moving random bounds.
//!
//! The crate provides
//!
//! - [`truncation`]: closed convex regions, exact projections and moving
//!   truncation schedules;
//! - [`engine`]: the general truncated recursion with matrix step sizes,
//!   seeded noise and replication sweeps;
//! - [`diagnostics`]: quadratic Lyapunov tracking, drift-condition probes and
//!   empirical convergence-rate fits;
//! - [`estimators`]: AR(m) simulation with recursive least squares,
//!   recursive likelihood and robust truncated estimators;
//! - [`scenarios`]: reproducible Monte Carlo studies driven by JSON configs.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod scenarios;
pub mod truncation;

pub use error::{Error, Result};
