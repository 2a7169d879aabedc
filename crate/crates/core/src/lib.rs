//! Efficient estimation of causal effects under stochastic treatment
//! policies with clustered interference.
//!
//! The crate fits nonparametric nuisance models for the unit-level outcome
//! regression and propensity score, evaluates policy-specific influence
//! functions over each cluster's treatment lattice, and combines them with
//! cross-fitting into point estimates and Wald intervals.

pub mod data;
pub mod error;
pub mod estimator;
pub mod nuisance;
pub mod policies;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
