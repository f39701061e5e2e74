//! Balanced subcohort sampling for stratified case-cohort designs.
//!
//! The crate provides the building blocks for selecting phase-2 samples
//! under a Cox proportional-hazards model and estimating regression
//! parameters from them:
//!
//! - [`cohort`]: cohort data structures and synthetic cohort generation,
//! - [`cox`]: weighted partial-likelihood fitting, score residuals and
//!   delta-beta influence measures,
//! - [`cube`]: the cube method for balanced sampling (fast flight phase
//!   plus an LP landing phase) and simple random sampling,
//! - [`calibrate`]: chi-square distance calibration of design weights,
//! - [`variance`]: the robust sandwich variance estimator with the
//!   residual-based phase-2 component,
//! - [`design`]: end-to-end design execution (auxiliary model, sampling,
//!   weighting, final fit),
//! - [`sim`]: the Monte Carlo replication harness,
//! - [`io`]: CSV ingestion/emission and result-table formatting,
//! - [`cli`]: the `cchbal` command-line front end.

pub mod calibrate;
pub mod cli;
pub mod cohort;
pub mod cox;
pub mod cube;
pub mod design;
mod error;
pub mod io;
pub mod linalg;
pub mod sim;
pub mod variance;

pub use error::{Error, Result};
