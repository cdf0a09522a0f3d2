//! Bayesian estimation of the complier average causal effect (CACE) under
//! two-sided noncompliance, with a covariate that predicts principal-stratum
//! membership.

pub mod data;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod gibbs;
pub mod io;
pub mod model;
pub mod outcome;
pub mod simulation;
pub mod strata;

pub use error::{CaceError, Result};
