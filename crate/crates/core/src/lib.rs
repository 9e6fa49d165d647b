//! Simulation and verification toolkit for critical branching processes in
//! random environment with immigration (BPIRE) and for the excited random
//! walk in random environment (ERWRE) whose right excursions they encode.
//!
//! The crate is organised by the objects it simulates:
//!
//! - [`env`]: the i.i.d. site/generation environment `(p, M)` and its
//!   analytic validation.
//! - [`branching`]: exact BPIRE simulation in both the recursive and the
//!   immigrant-line form, plus exact quenched laws for small instances.
//! - [`ladder`]: the log-mean walk, strict descending ladder epochs and the
//!   ladder subprocess with composed generating functions.
//! - [`recursion`]: the critical random difference equation and its dual.
//! - [`walk`]: cookie walks and the pathwise walk/branching coupling.
//! - [`classify`]: analytic criteria, empirical classification and the
//!   series/log-moment probe.
//! - [`config`] and [`runner`]: batch experiments driven by a config file.
//!
//! Randomness is addressed by `(seed, replica, lane, index)` through
//! [`rng::StreamKey`], so every number an experiment emits is a function of
//! its configuration and seed alone.

pub mod branching;
pub mod classify;
pub mod config;
pub mod env;
pub mod error;
pub mod ladder;
pub mod recursion;
pub mod rng;
pub mod runner;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
